use marco::instances::{gen_erdos_renyi, GraphInstance};
use marco::policy::{EncoderConfig, FeatureKind, Policy};
use marco::problems::ProblemKind;
use marco::search::{marco_improve, revisit_rate, MemoryMode, SearchConfig, SelectionRule};
use marco::training::{train_improvement, TrainConfig};

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    (m, (v / xs.len() as f64).sqrt())
}

fn main() {
    let t0 = std::time::Instant::now();
    let er20: Vec<_> = (0..100).map(|i| gen_erdos_renyi(20, 0.15, 5000 + i as u64)).collect();

    // (c) Criterion-6 untrained leg re-verify: MaxCut, greedy, 8 lanes.
    {
        let desk = EncoderConfig::desk();
        let op =
            Policy::new_improvement(ProblemKind::MaxCut, FeatureKind::OpRecency, desk.clone(), 9)
                .unwrap();
        let ret =
            Policy::new_improvement(ProblemKind::MaxCut, FeatureKind::Retrieved, desk.clone(), 9)
                .unwrap();
        let arms: [(&str, &Policy, MemoryMode); 3] = [
            ("none", &ret, MemoryMode::None),
            ("op", &op, MemoryMode::OpBased),
            ("shared", &ret, MemoryMode::Shared),
        ];
        let mut stats = Vec::new();
        for (name, pol, mode) in arms {
            let mut rs = Vec::new();
            for (i, g) in er20.iter().enumerate() {
                let mut c = SearchConfig::improve_defaults(20);
                c.threads = 8;
                c.memory_mode = mode;
                c.seed = 600 + i as u64;
                let r = marco_improve(g, pol, &c).unwrap();
                rs.push(revisit_rate(&r).unwrap());
            }
            let (m, se) = mean_se(&rs);
            print!("untrained-{name} {m:.4}+-{se:.4}  ");
            stats.push((m, se));
        }
        let g1 = (stats[0].0 - stats[1].0) / (stats[0].1.powi(2) + stats[1].1.powi(2)).sqrt();
        let g2 = (stats[1].0 - stats[2].0) / (stats[1].1.powi(2) + stats[2].1.powi(2)).sqrt();
        println!("gaps {g1:+.1}/{g2:+.1} sigma");
        eprintln!("(c) done t={:.0}s", t0.elapsed().as_secs_f64());
    }

    // Train the MC and MIS desk trios.
    let mut models = Vec::new();
    for problem in [ProblemKind::MaxCut, ProblemKind::Mis] {
        let mut trio = Vec::new();
        for mode in [MemoryMode::None, MemoryMode::OpBased, MemoryMode::Shared] {
            let cfg = match problem {
                ProblemKind::MaxCut => TrainConfig::desk_mc(mode, 42),
                _ => TrainConfig::desk_mis(mode, 42),
            };
            trio.push(train_improvement(&cfg, None).unwrap().policy);
        }
        models.push(trio);
        eprintln!("trained {problem} t={:.0}s", t0.elapsed().as_secs_f64());
    }

    // (d) Criterion-8 k-sweep re-verify: MC shared model, threads 8.
    {
        let er50: Vec<_> =
            (0..100).map(|i| gen_erdos_renyi(50, 0.15, 3000 + i as u64)).collect();
        for k in [1usize, 20] {
            let mut objs = Vec::new();
            for (i, g) in er50.iter().enumerate() {
                let mut c = SearchConfig::improve_defaults(50);
                c.threads = 8;
                c.k = k;
                c.seed = 500 + i as u64;
                objs.push(marco_improve(g, &models[0][2], &c).unwrap().best_objective);
            }
            let (m, se) = mean_se(&objs);
            print!("k={k} {m:.3}+-{se:.3}  ");
        }
        println!();
        eprintln!("(d) done t={:.0}s", t0.elapsed().as_secs_f64());
    }

    // (a)+(b) Criterion-7 ablation at threads=50 on 100 x ER(50, 0.15).
    let er50: Vec<_> = (0..100).map(|i| gen_erdos_renyi(50, 0.15, 3000 + i as u64)).collect();
    for (pi, pname) in ["mc", "mis"].iter().enumerate() {
        let trio = &models[pi];
        let arms: [(&str, &Policy, MemoryMode); 4] = [
            ("nim", &trio[0], MemoryMode::None),
            ("op-nim", &trio[1], MemoryMode::OpBased),
            ("marco-ind", &trio[2], MemoryMode::Independent),
            ("marco", &trio[2], MemoryMode::Shared),
        ];
        let mut per_method: Vec<Vec<f64>> = Vec::new();
        for (name, pol, mode) in arms {
            let mut objs = Vec::new();
            let mut walls = Vec::new();
            // Untimed warmup.
            let mut c0 = SearchConfig::improve_defaults(50);
            c0.memory_mode = mode;
            c0.seed = 499;
            let _ = marco_improve(&er50[0], pol, &c0).unwrap();
            for (i, g) in er50.iter().enumerate() {
                let mut c = SearchConfig::improve_defaults(50);
                c.memory_mode = mode;
                c.seed = 500 + i as u64;
                let r = marco_improve(g, pol, &c).unwrap();
                objs.push(r.best_objective);
                walls.push(r.wall_time_s);
            }
            let (mo, so) = mean_se(&objs);
            let (mw, _) = mean_se(&walls);
            println!("{pname} {name}: obj {mo:.3}+-{so:.3} wall {mw:.3}s");
            eprintln!("{pname} {name} done t={:.0}s", t0.elapsed().as_secs_f64());
            per_method.push(objs);
        }
        // Paired shared-minus-independent objective differences.
        let diffs: Vec<f64> = per_method[3]
            .iter()
            .zip(&per_method[2])
            .map(|(s, i)| s - i)
            .collect();
        let (md, sd) = mean_se(&diffs);
        println!("{pname} paired shared-ind obj diff {md:+.4}+-{sd:.4}");
    }
}

fn _unused(_: &GraphInstance) {}
