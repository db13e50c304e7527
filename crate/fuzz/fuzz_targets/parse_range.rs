#![no_main]

use dsfilter::runio::parse_inclusive_range;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(range) = parse_inclusive_range(data) {
        assert!(range.start() <= range.end());
        let again = parse_inclusive_range(&format!("{}..{}", range.start(), range.end())).expect("roundtrip");
        assert_eq!(range, again);
    }
});
