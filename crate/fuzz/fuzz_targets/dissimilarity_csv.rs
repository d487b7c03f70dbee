#![no_main]

use invmcmc_models::bmds::DissimilarityMatrix;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(delta) = DissimilarityMatrix::read_csv(data) {
        let mut buf = Vec::new();
        delta.write_csv(&mut buf).expect("write to memory");
        assert_eq!(DissimilarityMatrix::read_csv(&buf[..]).expect("round trip"), delta);
    }
});
