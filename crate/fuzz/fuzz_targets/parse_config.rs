#![no_main]

use dsfilter::runio::{parse_config, run_scenario};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let Ok(config) = parse_config(data) else {
        return;
    };
    // Valid configs must describe a runnable scenario; keep runs short.
    if config.steps <= 64 && config.state_dim() <= 8 {
        let _ = run_scenario(&config);
    }
});
