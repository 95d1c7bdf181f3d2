use crate::ScenarioArgs;
use anyhow::{bail, Context, Result};
use pilotwave::model::Scenario;
use pilotwave::scenarios::{scenario_names, scenario_source};
use std::path::Path;

/// Loads a scenario from a file or a bundled preset and applies `--seed` and
/// `--override`. Errors carry the source name.
pub fn load(args: &ScenarioArgs) -> Result<Scenario> {
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("ensemble.seed={seed}"));
    }
    let path = Path::new(&args.scenario);
    let (label, text) = if path.is_file() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        (path.display().to_string(), text)
    } else {
        let name = args.scenario.strip_suffix(".scn").unwrap_or(&args.scenario);
        match scenario_source(name) {
            Some(text) => (format!("{name}.scn"), text.to_string()),
            None => bail!(
                "usage: `{}` is neither a scenario file nor a bundled preset (available: {})",
                args.scenario,
                scenario_names().collect::<Vec<_>>().join(", ")
            ),
        }
    };
    Scenario::from_toml_with_overrides(&text, &overrides).with_context(|| label)
}
