//! The enterprise agent: a recursive tool-use loop over an OpenAI-compatible
//! model, with a hospital receptionist tool suite backed by an in-memory
//! store.

pub mod agent;
pub mod store;
pub mod tools;

pub use agent::{check_history, Agent, AgentConfig, AgentError, TurnSummary};
pub use store::{seed_store, Appointment, AppointmentStatus, Doctor, HospitalStore, Patient};
pub use tools::{execute_tool, hospital_tools, ToolRegistry, ToolSpec};
