#![no_main]

use invmcmc_models::advection_diffusion::ObservationSet;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(obs) = ObservationSet::read_csv(data, 0.4) {
        let mut buf = Vec::new();
        obs.write_csv(&mut buf).expect("write to memory");
        assert_eq!(ObservationSet::read_csv(&buf[..], 0.4).expect("round trip"), obs);
    }
});
