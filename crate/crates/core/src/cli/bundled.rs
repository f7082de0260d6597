//! Scenario files shipped with the tool.

use super::scenario::{parse_scenario_str, ScenarioFile};
use crate::error::Result;

pub const SCENARIOS: [(&str, &str); 8] = [
    ("study1a", include_str!("../../scenarios/study1a.json")),
    ("study1b", include_str!("../../scenarios/study1b.json")),
    ("study1c", include_str!("../../scenarios/study1c.json")),
    ("study1d", include_str!("../../scenarios/study1d.json")),
    ("study2", include_str!("../../scenarios/study2.json")),
    ("study3", include_str!("../../scenarios/study3.json")),
    ("study4", include_str!("../../scenarios/study4.json")),
    ("parallel2", include_str!("../../scenarios/parallel2.json")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    SCENARIOS.iter().map(|(n, _)| *n)
}

/// Source text of a bundled scenario; `name` may carry a `.json` suffix.
pub fn source(name: &str) -> Option<&'static str> {
    let name = name.strip_suffix(".json").unwrap_or(name);
    SCENARIOS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load(name: &str) -> Option<Result<ScenarioFile>> {
    source(name).map(parse_scenario_str)
}
