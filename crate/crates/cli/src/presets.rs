//! Configurations shipped with the binary, selectable with `--preset`.

use crate::config::{parse_config, RunConfig};
use crate::error::{CliError, CliResult};

pub const PRESETS: &[(&str, &str)] = &[
    ("isokinetic-harmonic", include_str!("../presets/isokinetic-harmonic.toml")),
    ("canonical-dissipative-quartic", include_str!("../presets/canonical-dissipative-quartic.toml")),
    ("breit-wigner-windowed", include_str!("../presets/breit-wigner-windowed.toml")),
    ("fermi-bose-plus", include_str!("../presets/fermi-bose-plus.toml")),
    ("fermi-bose-minus", include_str!("../presets/fermi-bose-minus.toml")),
    ("canonical-harmonic", include_str!("../presets/canonical-harmonic.toml")),
    ("mismatched-canonical", include_str!("../presets/mismatched-canonical.toml")),
];

/// One preset per (family, force) pairing.
pub const FAMILY_PRESETS: &[&str] = &[
    "isokinetic-harmonic",
    "canonical-dissipative-quartic",
    "breit-wigner-windowed",
    "fermi-bose-plus",
    "fermi-bose-minus",
];

pub fn text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn load(name: &str) -> CliResult<RunConfig> {
    let text = text(name).ok_or_else(|| {
        let known: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
        CliError::config("preset", format!("unknown preset `{name}`; known: {}", known.join(", ")))
    })?;
    parse_config(text)
}
