#![no_main]

use cfnoma::gp::{parse_gp, write_gp};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(problem) = parse_gp(text) else {
        return;
    };
    // Anything that parses must survive a write/parse round trip.
    let again = parse_gp(&write_gp(&problem)).expect("written problem parses");
    assert_eq!(again.num_vars(), problem.num_vars());
    assert_eq!(again.num_constraints(), problem.num_constraints());
    let _ = problem.validate();
});
