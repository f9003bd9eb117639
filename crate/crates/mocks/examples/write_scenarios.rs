//! Regenerate the shipped scenario files from their presets.

use voxline_mocks::Scenario;

fn main() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios");
    for s in [Scenario::calibrated(), Scenario::receptionist()] {
        std::fs::write(format!("{dir}/{}.json", s.name), s.to_json() + "\n").expect("write scenario");
    }
}
