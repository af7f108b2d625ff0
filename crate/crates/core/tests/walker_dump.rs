use gaitnet_core::data::synth::WalkerParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
#[ignore]
fn dump_walker() {
    let p = WalkerParams::sample(&mut ChaCha8Rng::seed_from_u64(1));
    for (phase, view) in [(0.0, 90.0), (1.4, 90.0), (0.0, 0.0), (1.4, 45.0)] {
        println!("--- phase {phase} view {view}");
        let f = p.render_frame(phase, view);
        for r in 0..f.h {
            let line: String = (0..f.w).map(|c| if f.get(r, c) != 0 { '#' } else { '.' }).collect();
            println!("{line}");
        }
    }
}
