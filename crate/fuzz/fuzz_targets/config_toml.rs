#![no_main]

use cfnoma_cli::config::{parse_config, ExperimentConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(file) = parse_config(text) else {
        return;
    };
    let Ok(cfg) = ExperimentConfig::resolve(&file) else {
        return;
    };
    // A resolved config replays to itself through its sidecar text.
    let again = ExperimentConfig::resolve(&parse_config(&cfg.to_toml()).expect("sidecar parses"))
        .expect("sidecar resolves");
    assert_eq!(cfg, again);
});
