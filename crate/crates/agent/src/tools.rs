//! The receptionist tool suite and its dispatcher.
//!
//! Tool failures never raise: they come back as `{"error": kind, "detail": ...}`
//! objects so the model can apologise or ask again.

use serde_json::{json, Map, Value};
use voxline_clients::llm::{ToolCall, ToolDefinition};

use crate::store::{HospitalStore, StoreError};

pub type ToolHandler = fn(&mut HospitalStore, &Map<String, Value>) -> Value;

#[derive(Clone)]
pub struct ToolSpec {
    pub name: &'static str,
    pub description: &'static str,
    /// JSON schema of the argument object.
    pub parameters: Value,
    pub handler: ToolHandler,
    /// Whether the handler may modify the store.
    pub mutates: bool,
}

impl std::fmt::Debug for ToolSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolSpec").field("name", &self.name).finish()
    }
}

impl ToolSpec {
    pub fn definition(&self) -> ToolDefinition {
        ToolDefinition {
            name: self.name.to_string(),
            description: self.description.to_string(),
            parameters: self.parameters.clone(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ToolRegistry {
    tools: Vec<ToolSpec>,
}

impl ToolRegistry {
    /// Fails on a duplicate tool name.
    pub fn new(tools: Vec<ToolSpec>) -> Result<Self, String> {
        let mut names: Vec<_> = tools.iter().map(|t| t.name).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(format!("duplicate tool name {}", w[0]));
        }
        Ok(Self { tools })
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name)
    }

    pub fn definitions(&self) -> Vec<ToolDefinition> {
        self.tools.iter().map(ToolSpec::definition).collect()
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.tools.iter().map(|t| t.name).collect()
    }
}

pub fn error_result(kind: &str, detail: impl Into<String>) -> Value {
    json!({ "error": kind, "detail": detail.into() })
}

fn store_error(e: StoreError) -> Value {
    match e {
        StoreError::NotFound(what) => error_result("not found", what),
        StoreError::SlotUnavailable => error_result("slot unavailable", "that time is not open"),
        StoreError::AlreadyCancelled => error_result("already cancelled", "the appointment was already cancelled"),
    }
}

/// Check `args` against the subset of JSON schema the tool suite uses:
/// `required`, and per-property `type` / `pattern`-free string formats
/// (`date` = `YYYY-MM-DD`, `time` = `HH:MM`).
fn validate(schema: &Value, args: &Map<String, Value>) -> Result<(), String> {
    let props = schema.get("properties").and_then(Value::as_object);
    if let Some(req) = schema.get("required").and_then(Value::as_array) {
        for r in req.iter().filter_map(Value::as_str) {
            if !args.contains_key(r) {
                return Err(format!("missing required field `{r}`"));
            }
        }
    }
    let Some(props) = props else { return Ok(()) };
    for (key, value) in args {
        let Some(prop) = props.get(key) else {
            return Err(format!("unexpected field `{key}`"));
        };
        let ty = prop.get("type").and_then(Value::as_str).unwrap_or("string");
        let ok = match ty {
            "string" => value.is_string(),
            "integer" => value.is_i64() || value.is_u64(),
            "number" => value.is_number(),
            "boolean" => value.is_boolean(),
            _ => true,
        };
        if !ok {
            return Err(format!("field `{key}` must be of type {ty}"));
        }
        if let (Some(fmt), Some(s)) = (prop.get("format").and_then(Value::as_str), value.as_str()) {
            let valid = match fmt {
                "date" => is_iso_date(s),
                "time" => is_hh_mm(s),
                _ => true,
            };
            if !valid {
                return Err(format!("field `{key}` is not a valid {fmt}: {s:?}"));
            }
        }
    }
    Ok(())
}

fn is_iso_date(s: &str) -> bool {
    let b = s.as_bytes();
    if b.len() != 10 || b[4] != b'-' || b[7] != b'-' {
        return false;
    }
    let num = |r: std::ops::Range<usize>| s[r].parse::<u32>().ok();
    matches!(
        (num(0..4), num(5..7), num(8..10)),
        (Some(_), Some(m), Some(d)) if (1..=12).contains(&m) && (1..=31).contains(&d)
    ) && s
        .bytes()
        .enumerate()
        .all(|(i, c)| i == 4 || i == 7 || c.is_ascii_digit())
}

fn is_hh_mm(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() == 5
        && b[2] == b':'
        && b.iter().enumerate().all(|(i, c)| i == 2 || c.is_ascii_digit())
        && s[0..2].parse::<u32>().is_ok_and(|h| h < 24)
        && s[3..5].parse::<u32>().is_ok_and(|m| m < 60)
}

fn str_arg<'a>(args: &'a Map<String, Value>, key: &str) -> &'a str {
    args.get(key).and_then(Value::as_str).unwrap_or_default()
}

fn check_availability(store: &mut HospitalStore, args: &Map<String, Value>) -> Value {
    let (doctor, date) = (str_arg(args, "doctor"), str_arg(args, "date"));
    match store.open_slots(doctor, date) {
        Ok(slots) => json!({
            "doctor": store.doctor_key(doctor),
            "date": date,
            "slots": slots,
        }),
        Err(e) => store_error(e),
    }
}

fn schedule_appointment(store: &mut HospitalStore, args: &Map<String, Value>) -> Value {
    let (patient, doctor) = (str_arg(args, "patient_id"), str_arg(args, "doctor"));
    let (date, time) = (str_arg(args, "date"), str_arg(args, "time"));
    match store.book(patient, doctor, date, time) {
        Ok(id) => {
            let a = &store.appointments[&id];
            json!({
                "appointment_id": id,
                "status": "booked",
                "patient_id": a.patient_id,
                "doctor": a.doctor,
                "date": a.date,
                "time": a.time,
            })
        }
        Err(e) => store_error(e),
    }
}

fn cancel_appointment(store: &mut HospitalStore, args: &Map<String, Value>) -> Value {
    let id = str_arg(args, "appointment_id");
    match store.cancel(id) {
        Ok(a) => json!({
            "appointment_id": id,
            "status": "cancelled",
            "doctor": a.doctor,
            "date": a.date,
            "time": a.time,
        }),
        Err(e) => store_error(e),
    }
}

fn get_patient_info(store: &mut HospitalStore, args: &Map<String, Value>) -> Value {
    let id = str_arg(args, "patient_id");
    let Some(p) = store.patients.get(id) else {
        return store_error(StoreError::NotFound(format!("patient {id}")));
    };
    let appointments: Vec<Value> = store
        .appointments_for(id)
        .into_iter()
        .map(|(aid, a)| {
            json!({
                "appointment_id": aid,
                "doctor": a.doctor,
                "date": a.date,
                "time": a.time,
                "status": a.status,
            })
        })
        .collect();
    json!({
        "patient_id": id,
        "name": p.name,
        "date_of_birth": p.date_of_birth,
        "primary_doctor": p.primary_doctor,
        "appointments": appointments,
    })
}

fn get_doctor_info(store: &mut HospitalStore, args: &Map<String, Value>) -> Value {
    let name = str_arg(args, "doctor");
    let Some(key) = store.doctor_key(name) else {
        return store_error(StoreError::NotFound(format!("doctor {name}")));
    };
    let d = &store.doctors[&key];
    let dates: Vec<&String> = d
        .schedule
        .iter()
        .filter(|(_, s)| !s.is_empty())
        .map(|(date, _)| date)
        .collect();
    json!({
        "doctor": key,
        "specialty": d.specialty,
        "available_dates": dates,
    })
}

fn object_schema(props: Value, required: &[&str]) -> Value {
    json!({ "type": "object", "properties": props, "required": required })
}

/// The five receptionist tools.
pub fn hospital_tools() -> ToolRegistry {
    let doctor = json!({ "type": "string", "description": "Doctor surname, e.g. \"Smith\"" });
    let date = json!({ "type": "string", "format": "date", "description": "ISO date, YYYY-MM-DD" });
    let patient = json!({ "type": "string", "description": "Patient identifier, e.g. \"P001\"" });
    ToolRegistry::new(vec![
        ToolSpec {
            name: "check_availability",
            description: "List a doctor's open appointment slots on a date.",
            parameters: object_schema(json!({ "doctor": doctor, "date": date }), &["doctor", "date"]),
            handler: check_availability,
            mutates: false,
        },
        ToolSpec {
            name: "schedule_appointment",
            description: "Book an open slot for a patient. Confirm with the caller first.",
            parameters: object_schema(
                json!({
                    "patient_id": patient,
                    "doctor": doctor,
                    "date": date,
                    "time": { "type": "string", "format": "time", "description": "24h time, HH:MM" },
                }),
                &["patient_id", "doctor", "date", "time"],
            ),
            handler: schedule_appointment,
            mutates: true,
        },
        ToolSpec {
            name: "cancel_appointment",
            description: "Cancel an existing appointment by its identifier.",
            parameters: object_schema(
                json!({ "appointment_id": { "type": "string", "description": "e.g. \"A1001\"" } }),
                &["appointment_id"],
            ),
            handler: cancel_appointment,
            mutates: true,
        },
        ToolSpec {
            name: "get_patient_info",
            description: "Look up a patient's record and appointments.",
            parameters: object_schema(json!({ "patient_id": patient }), &["patient_id"]),
            handler: get_patient_info,
            mutates: false,
        },
        ToolSpec {
            name: "get_doctor_info",
            description: "Look up a doctor's specialty and the dates they have openings.",
            parameters: object_schema(json!({ "doctor": doctor }), &["doctor"]),
            handler: get_doctor_info,
            mutates: false,
        },
    ])
    .expect("tool names are unique")
}

/// Run one call against the store and return its result object.
pub fn execute_tool(registry: &ToolRegistry, call: &ToolCall, store: &mut HospitalStore) -> Value {
    let Some(spec) = registry.get(&call.name) else {
        return error_result("unknown tool", format!("no tool named {}", call.name));
    };
    let args = match serde_json::from_str::<Value>(&call.arguments_json) {
        Ok(Value::Object(m)) => m,
        Ok(_) => return error_result("validation", "arguments must be a JSON object"),
        Err(e) => return error_result("validation", format!("arguments are not valid JSON: {e}")),
    };
    if let Err(detail) = validate(&spec.parameters, &args) {
        return error_result("validation", detail);
    }
    (spec.handler)(store, &args)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::seed_store;

    fn call(name: &str, args: Value) -> ToolCall {
        ToolCall {
            id: "c".into(),
            name: name.into(),
            arguments_json: args.to_string(),
        }
    }

    /// A (doctor, date) pair of the seeded store with exactly `n` open slots.
    fn find_date_with(store: &HospitalStore, n: usize) -> (String, String) {
        store
            .doctors
            .iter()
            .flat_map(|(name, d)| d.schedule.iter().map(move |(date, s)| (name, date, s.len())))
            .find(|&(_, _, len)| len == n)
            .map(|(name, date, _)| (name.clone(), date.clone()))
            .expect("seed has such a date")
    }

    #[test]
    fn check_availability_lists_open_slots() {
        let mut store = seed_store(42);
        let (doctor, date) = find_date_with(&store, 3);
        let reg = hospital_tools();
        let r = execute_tool(
            &reg,
            &call("check_availability", json!({"doctor": doctor, "date": date})),
            &mut store,
        );
        assert_eq!(r["slots"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn double_booking_rejected_store_unchanged() {
        let mut store = seed_store(42);
        let reg = hospital_tools();
        let (doctor, date) = find_date_with(&store, 3);
        let time = store.doctors[&doctor].schedule[&date][0].clone();
        let args = json!({"patient_id": "P001", "doctor": doctor, "date": date, "time": time});
        let first = execute_tool(&reg, &call("schedule_appointment", args.clone()), &mut store);
        assert_eq!(first["status"], "booked");
        let snapshot = store.clone();
        let second = execute_tool(&reg, &call("schedule_appointment", args), &mut store);
        assert_eq!(second["error"], "slot unavailable");
        assert_eq!(store, snapshot);
    }

    #[test]
    fn cancel_unknown_is_not_found() {
        let mut store = seed_store(42);
        let r = execute_tool(
            &hospital_tools(),
            &call("cancel_appointment", json!({"appointment_id": "A9999"})),
            &mut store,
        );
        assert_eq!(r["error"], "not found");
    }

    #[test]
    fn validation_errors() {
        let mut store = seed_store(42);
        let reg = hospital_tools();
        let r = execute_tool(
            &reg,
            &call("check_availability", json!({"doctor": "Smith"})),
            &mut store,
        );
        assert_eq!(r["error"], "validation");
        assert!(r["detail"].as_str().unwrap().contains("date"));
        let r = execute_tool(&reg, &call("get_patient_info", json!({"patient_id": 7})), &mut store);
        assert_eq!(r["error"], "validation");
        let r = execute_tool(
            &reg,
            &call("check_availability", json!({"doctor": "Smith", "date": "March 10"})),
            &mut store,
        );
        assert_eq!(r["error"], "validation");
        let r = execute_tool(
            &reg,
            &call(
                "schedule_appointment",
                json!({"patient_id": "P001", "doctor": "Smith", "date": "2025-03-10", "time": "9am"}),
            ),
            &mut store,
        );
        assert_eq!(r["error"], "validation");
    }

    #[test]
    fn unknown_tool() {
        let mut store = seed_store(42);
        let r = execute_tool(&hospital_tools(), &call("launch_rocket", json!({})), &mut store);
        assert_eq!(r["error"], "unknown tool");
    }

    #[test]
    fn read_only_tools_leave_store_identical() {
        let mut store = seed_store(3);
        let before = store.to_json();
        let reg = hospital_tools();
        for c in [
            call("check_availability", json!({"doctor": "Lee", "date": "2025-03-11"})),
            call("get_patient_info", json!({"patient_id": "P002"})),
            call("get_doctor_info", json!({"doctor": "Dr. Patel"})),
            call("get_doctor_info", json!({"doctor": "Nobody"})),
        ] {
            assert!(!reg.get(&c.name).unwrap().mutates);
            execute_tool(&reg, &c, &mut store);
        }
        assert_eq!(store.to_json(), before);
    }

    #[test]
    fn patient_info_lists_appointments() {
        let mut store = seed_store(42);
        let r = execute_tool(
            &hospital_tools(),
            &call("get_patient_info", json!({"patient_id": "P002"})),
            &mut store,
        );
        assert_eq!(r["name"], "Brian Chen");
        assert_eq!(r["appointments"].as_array().unwrap().len(), 1);
    }

    #[test]
    fn registry_rejects_duplicates() {
        let mut tools: Vec<ToolSpec> = hospital_tools().tools;
        tools.push(tools[0].clone());
        assert!(ToolRegistry::new(tools).is_err());
    }

    #[test]
    fn formats() {
        assert!(is_iso_date("2025-03-10"));
        assert!(!is_iso_date("2025-13-10"));
        assert!(!is_iso_date("2025/03/10"));
        assert!(is_hh_mm("09:30"));
        assert!(!is_hh_mm("24:00"));
        assert!(!is_hh_mm("9:30"));
    }
}
