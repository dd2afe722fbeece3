//! Times a five-scale M-sieve of a seeded random volume.
//!
//! `cargo run --release -p uxpr --example sieve_timing -- 128 5`

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uxpr::sieve::{decompose, FilterKind, ScaleSchedule};
use uxpr::{Connectivity, Volume};

fn main() {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<usize>().expect("integer argument"));
    let side = args.next().unwrap_or(64);
    let repeats = args.next().unwrap_or(1).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data = (0..side * side * side).map(|_| rng.gen()).collect();
    let v = Volume::new(&[side, side, side], data).unwrap();
    let sched = ScaleSchedule::new(vec![4000, 20575, 105830, 544357, 2800000]).unwrap();
    let mut times: Vec<Duration> = (0..repeats)
        .map(|_| {
            let t = Instant::now();
            decompose(&v, &sched, FilterKind::MFilter, Connectivity::Six).unwrap();
            t.elapsed()
        })
        .collect();
    times.sort();
    println!("{side}^3: min {:.2?} median {:.2?} over {repeats}", times[0], times[repeats / 2]);
}
