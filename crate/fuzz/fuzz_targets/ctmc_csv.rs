#![no_main]

use invmcmc_models::ctmc::CtmcObservations;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&states, csv)) = data.split_first() else {
        return;
    };
    let initial = CtmcObservations::uniform_initial(2 + states as usize % 8);
    if let Ok(obs) = CtmcObservations::read_csv(csv, initial.clone()) {
        let mut buf = Vec::new();
        obs.write_csv(&mut buf).expect("write to memory");
        assert_eq!(CtmcObservations::read_csv(&buf[..], initial).expect("round trip"), obs);
    }
});
