use iob_core::harness::config::Config;
use iob_core::harness::experiments;

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "consensus".into());
    let mut cfg = Config::default();
    cfg.set("crypto.backend", "test467").unwrap();
    cfg.set("dataset.capability_mode", "spatial").unwrap();
    match mode.as_str() {
        "consensus" => {
            let out = experiments::exp_consensus(&cfg).unwrap();
            println!("{}", out.csv);
            println!("--- meta extracts ---");
            for l in out.meta.lines().filter(|l| l.starts_with("n=") || l.starts_with("warn")) {
                println!("{l}");
            }
            // ratio at each n
            for n in &cfg.consensus_node_counts {
                let f = out.rows.iter().find(|r| r.n == *n && !r.clustered).unwrap();
                let c = out.rows.iter().find(|r| r.n == *n && r.clustered).unwrap();
                println!("n={} ratio={:.3} frac={:.3}", n, c.time_s / f.time_s, c.max_cluster_frac);
            }
        }
        "auth" => {
            let mut cfg = cfg.clone();
            cfg.set("crypto.backend", "prod").unwrap();
            let out = experiments::exp_auth(&cfg).unwrap();
            println!("{}", out.csv);
            let mut uncl: Vec<f64> = vec![];
            let mut cl: Vec<f64> = vec![];
            for n in &cfg.auth_node_counts {
                let u = out.rows.iter().find(|r| r.n == *n && !r.clustered).unwrap();
                let c = out.rows.iter().find(|r| r.n == *n && r.clustered).unwrap();
                uncl.push(u.time_s); cl.push(c.time_s);
                println!("n={} unclustered={:.4}s clustered={:.4}s", n, u.time_s, c.time_s);
            }
            println!("uncl growth: {:.2}x, cl spread: {:.2}x, mean reduction {:.3}",
                uncl.last().unwrap()/uncl[0],
                cl.iter().cloned().fold(f64::MIN, f64::max)/cl.iter().cloned().fold(f64::MAX, f64::min),
                1.0 - cl.iter().sum::<f64>()/uncl.iter().sum::<f64>());
        }
        "access" => {
            let out = experiments::exp_access(&cfg).unwrap();
            println!("{}", out.csv);
        }
        "multi" => {
            let mut cfg = cfg.clone();
            cfg.set("crypto.backend", "prod").unwrap();
            let out = experiments::exp_auth_multiuser(&cfg).unwrap();
            println!("{}", out.csv);
        }
        _ => {}
    }
}
