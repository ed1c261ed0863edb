//! Fibre delay and loss, detector dark counts and the linear-optics BSM.
//!
//!     cargo run --example channel_physics

use qnet::hardware::{
    dark_count_events, BsmParams, BsmState, ChannelParams, DetectorParams, MemoryArray, MemoryParams, PhotonArrival,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    for km in [1.0, 10.0, 50.0, 200.0] {
        let ch = ChannelParams::new(km * 1000.0, 0.2);
        println!(
            "{km:>5} km: delay {:>13} ps, transmission {:.6}",
            ch.propagation_delay(),
            ch.transmission_probability()
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let detector = DetectorParams {
        efficiency: 0.9,
        count_rate_hz: 2.5e7,
        dark_count_rate_hz: 100.0,
        time_resolution_ps: 100,
    };
    let clicks = dark_count_events(&detector, (0, 1_000_000_000_000), &mut rng);
    println!("dark clicks in 1 s: {} (first at {:?} ps)", clicks.len(), clicks.first().map(|c| c.timestamp));

    // heralded link attempts over 2 x 5 km with the BSM in the middle
    let half = ChannelParams::new(5_000.0, 0.2);
    let memory = MemoryParams {
        coherence_time_s: 1.3,
        frequency_hz: 2e4,
        efficiency: 0.9,
        fidelity: 0.9,
    };
    let mut ends = [MemoryArray::new(0, 1, memory), MemoryArray::new(1, 1, memory)];
    let mut bsm = BsmState::new(BsmParams {
        detector,
        coincidence_window_ps: 200,
    });
    let trials = 20_000u64;
    let mut heralds = 0;
    for i in 0..trials {
        let now = i * memory.period_ps();
        let at = now + half.propagation_delay();
        let mut arrivals = [None, None];
        for (k, m) in ends.iter_mut().enumerate() {
            arrivals[k] = m
                .excite(0, now, &mut rng)
                .unwrap()
                .map(|p| PhotonArrival { photon: half.transmit(p, &mut rng), at });
            m.reset(0).unwrap();
        }
        if bsm.measure(arrivals[0], arrivals[1], at, &mut rng).unwrap().is_success() {
            heralds += 1;
        }
    }
    println!("link success rate {:.4} over {trials} attempts", heralds as f64 / trials as f64);
}
