//! The built-in scenario set: a 1 km square with corner anchors, exponential
//! NLOS bias with mean 500 m, two noise levels and zero to two LOS links,
//! plus a false-alarm variant.

use nlos_track_core::scenario::ScenarioSpec;

use crate::config::ScenarioFile;

/// `(file stem, scenario)` pairs in a fixed order.
pub fn builtin() -> Vec<(String, ScenarioSpec)> {
    let mut out = Vec::new();
    for sigma_n in [10.0, 100.0] {
        for los in 0..=2 {
            let name = format!("s{sigma_n}_los{los}");
            out.push((name.clone(), ScenarioSpec::square(&name, sigma_n, los)));
        }
    }
    // the single LOS anchor (id 4) is reported NLOS
    let name = "s10_los1_fa".to_string();
    let mut fa = ScenarioSpec::square(&name, 10.0, 1);
    fa.fa_ids = vec![4];
    out.push((name, fa));
    out
}

/// TOML text of every built-in scenario.
pub fn builtin_files() -> Vec<(String, String)> {
    builtin()
        .into_iter()
        .map(|(stem, spec)| {
            (
                format!("{stem}.toml"),
                ScenarioFile::from_spec(&spec, None).to_toml(),
            )
        })
        .collect()
}

/// Looks a built-in scenario up by its file stem.
pub fn by_name(stem: &str) -> Option<ScenarioSpec> {
    builtin()
        .into_iter()
        .find(|(s, _)| s == stem)
        .map(|(_, spec)| spec)
}
