//! In-memory hospital data: doctors with open slots, patients, appointments.
//!
//! A doctor's `schedule` lists only *open* slots. Booking removes the slot and
//! cancelling puts it back, so the schedule is always the availability.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Doctor {
    pub specialty: String,
    /// ISO date (`YYYY-MM-DD`) to sorted open `HH:MM` slots.
    pub schedule: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patient {
    pub name: String,
    pub date_of_birth: String,
    pub primary_doctor: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AppointmentStatus {
    Booked,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Appointment {
    pub patient_id: String,
    pub doctor: String,
    pub date: String,
    pub time: String,
    pub status: AppointmentStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HospitalStore {
    pub schema_version: u32,
    pub doctors: BTreeMap<String, Doctor>,
    pub patients: BTreeMap<String, Patient>,
    pub appointments: BTreeMap<String, Appointment>,
    pub next_appointment_number: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StoreError {
    NotFound(String),
    SlotUnavailable,
    AlreadyCancelled,
}

impl HospitalStore {
    pub const SCHEMA_VERSION: u32 = 1;

    pub fn empty() -> Self {
        Self {
            schema_version: Self::SCHEMA_VERSION,
            doctors: BTreeMap::new(),
            patients: BTreeMap::new(),
            appointments: BTreeMap::new(),
            next_appointment_number: 1001,
        }
    }

    /// Resolve "Smith", "smith" or "Dr. Smith" to the stored key.
    pub fn doctor_key(&self, name: &str) -> Option<String> {
        let n = name.trim();
        let n = n
            .strip_prefix("Dr.")
            .or_else(|| n.strip_prefix("Dr "))
            .or_else(|| n.strip_prefix("Doctor "))
            .unwrap_or(n)
            .trim();
        self.doctors.keys().find(|k| k.eq_ignore_ascii_case(n)).cloned()
    }

    pub fn open_slots(&self, doctor: &str, date: &str) -> Result<Vec<String>, StoreError> {
        let key = self
            .doctor_key(doctor)
            .ok_or_else(|| StoreError::NotFound(format!("doctor {doctor}")))?;
        Ok(self.doctors[&key].schedule.get(date).cloned().unwrap_or_default())
    }

    pub fn book(&mut self, patient_id: &str, doctor: &str, date: &str, time: &str) -> Result<String, StoreError> {
        if !self.patients.contains_key(patient_id) {
            return Err(StoreError::NotFound(format!("patient {patient_id}")));
        }
        let key = self
            .doctor_key(doctor)
            .ok_or_else(|| StoreError::NotFound(format!("doctor {doctor}")))?;
        let slots = self
            .doctors
            .get_mut(&key)
            .and_then(|d| d.schedule.get_mut(date))
            .ok_or(StoreError::SlotUnavailable)?;
        let pos = slots
            .iter()
            .position(|s| s == time)
            .ok_or(StoreError::SlotUnavailable)?;
        slots.remove(pos);
        let id = format!("A{}", self.next_appointment_number);
        self.next_appointment_number += 1;
        self.appointments.insert(
            id.clone(),
            Appointment {
                patient_id: patient_id.to_string(),
                doctor: key,
                date: date.to_string(),
                time: time.to_string(),
                status: AppointmentStatus::Booked,
            },
        );
        Ok(id)
    }

    pub fn cancel(&mut self, appointment_id: &str) -> Result<Appointment, StoreError> {
        let appt = self
            .appointments
            .get_mut(appointment_id)
            .ok_or_else(|| StoreError::NotFound(format!("appointment {appointment_id}")))?;
        if appt.status == AppointmentStatus::Cancelled {
            return Err(StoreError::AlreadyCancelled);
        }
        appt.status = AppointmentStatus::Cancelled;
        let appt = appt.clone();
        if let Some(doc) = self.doctors.get_mut(&appt.doctor) {
            let slots = doc.schedule.entry(appt.date.clone()).or_default();
            if !slots.contains(&appt.time) {
                slots.push(appt.time.clone());
                slots.sort();
            }
        }
        Ok(appt)
    }

    pub fn appointments_for(&self, patient_id: &str) -> Vec<(&String, &Appointment)> {
        self.appointments
            .iter()
            .filter(|(_, a)| a.patient_id == patient_id)
            .collect()
    }

    pub fn open_slot_count(&self) -> usize {
        self.doctors
            .values()
            .flat_map(|d| d.schedule.values())
            .map(Vec::len)
            .sum()
    }

    /// Checks the store invariants, returning the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (id, a) in &self.appointments {
            let doc = self
                .doctors
                .get(&a.doctor)
                .ok_or_else(|| format!("{id}: unknown doctor {}", a.doctor))?;
            if !self.patients.contains_key(&a.patient_id) {
                return Err(format!("{id}: unknown patient {}", a.patient_id));
            }
            let open = doc.schedule.get(&a.date).is_some_and(|s| s.contains(&a.time));
            if a.status == AppointmentStatus::Booked && open {
                return Err(format!("{id}: booked slot still listed as open"));
            }
        }
        for (name, d) in &self.doctors {
            for (date, slots) in &d.schedule {
                let mut sorted = slots.clone();
                sorted.sort();
                sorted.dedup();
                if &sorted != slots {
                    return Err(format!("{name} {date}: slots not sorted and unique"));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("store serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

const DOCTORS: [(&str, &str); 4] = [
    ("Smith", "Family Medicine"),
    ("Lee", "Cardiology"),
    ("Patel", "Pediatrics"),
    ("Garcia", "Dermatology"),
];

const PATIENTS: [(&str, &str, &str); 6] = [
    ("P001", "Alice Johnson", "1985-04-12"),
    ("P002", "Brian Chen", "1972-11-03"),
    ("P003", "Carmen Diaz", "1990-07-25"),
    ("P004", "David Okafor", "2001-01-30"),
    ("P005", "Emma Novak", "1964-09-18"),
    ("P006", "Farid Haddad", "1998-05-06"),
];

const DATES: [&str; 5] = ["2025-03-10", "2025-03-11", "2025-03-12", "2025-03-13", "2025-03-14"];

const TIMES: [&str; 12] = [
    "09:00", "09:30", "10:00", "10:30", "11:00", "11:30", "13:00", "13:30", "14:00", "14:30", "15:00", "15:30",
];

/// Deterministic fixture store: the same seed always yields the same store.
/// Every doctor has 2 to 5 open slots on each of five weekdays, and two
/// appointments are pre-booked.
pub fn seed_store(seed: u64) -> HospitalStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = HospitalStore::empty();

    for (name, specialty) in DOCTORS {
        let mut schedule = BTreeMap::new();
        for date in DATES {
            let n = rng.random_range(2..=5);
            let mut times: Vec<String> = TIMES.choose_multiple(&mut rng, n).map(|t| t.to_string()).collect();
            times.sort();
            schedule.insert(date.to_string(), times);
        }
        store.doctors.insert(
            name.to_string(),
            Doctor {
                specialty: specialty.to_string(),
                schedule,
            },
        );
    }
    for (id, name, dob) in PATIENTS {
        let doctor = DOCTORS[rng.random_range(0..DOCTORS.len())].0;
        store.patients.insert(
            id.to_string(),
            Patient {
                name: name.to_string(),
                date_of_birth: dob.to_string(),
                primary_doctor: doctor.to_string(),
            },
        );
    }
    for patient in ["P002", "P005"] {
        let doctor = store.patients[patient].primary_doctor.clone();
        let date = DATES[rng.random_range(0..DATES.len())];
        let time = store.doctors[&doctor].schedule[date][0].clone();
        store.book(patient, &doctor, date, &time).expect("seeded slot is open");
    }
    store
}
