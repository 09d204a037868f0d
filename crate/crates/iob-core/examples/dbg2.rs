use iob_core::harness::config::Config;
use iob_core::harness::experiments::{build_system, load_nodes, run_auth_wave, sample_nodes, run_seed};

fn main() {
    let mut cfg = Config::default();
    cfg.set("dataset.capability_mode", "spatial").unwrap();
    let all = load_nodes(&cfg).unwrap();
    for n in [250usize, 500, 1000] {
        let records = sample_nodes(&all, n, run_seed(cfg.seed, &format!("sample/{n}"))).unwrap();
        let build = build_system(&cfg, records, false).unwrap();
        let t = std::time::Instant::now();
        let times = run_auth_wave(&cfg, &build, false, 1, &format!("auth/{n}/f")).unwrap();
        println!("n={n}: sim {:.4}s wall {:.2}s", times[0], t.elapsed().as_secs_f64());
    }
}
