use dkrr::data::Target;
use dkrr::experiments::{run_simulation, ExperimentConfig, Simulation};
use dkrr::metrics::{Criterion, Trial};

#[test]
fn few_machines_match_the_global_estimator() {
    let mut cfg = ExperimentConfig::defaults(Simulation::Sim1, Target::G1);
    cfg.n = vec![4000];
    cfg.m = vec![5];
    cfg.ell = vec![0];
    let report = run_simulation(&cfg).unwrap();
    let re = report.mean(Criterion::Re, Some(4000), Some(5), Some(0));
    assert!(re < 0.05, "RE = {re}");
}

#[test]
fn one_machine_is_the_global_estimator() {
    let mut cfg = ExperimentConfig::defaults(Simulation::Motivation, Target::G2);
    cfg.n = vec![500];
    cfg.m = vec![1, 10];
    cfg.trials = 2;
    cfg.n_test = 200;
    cfg.n_validation = 200;
    let report = run_simulation(&cfg).unwrap();
    for trial in [Trial::Index(0), Trial::Index(1)] {
        let gmse = report.find(Criterion::Gmse, Some(500), None, None, trial).unwrap().value;
        let ae = report.find(Criterion::Ae, Some(500), Some(1), Some(0), trial).unwrap().value;
        assert!((ae - gmse).abs() <= 1e-10 * gmse, "AE {ae} GMSE {gmse}");
    }
    assert!(report.find(Criterion::LocalApprox, Some(500), Some(10), None, Trial::Mean).is_some());
}

#[test]
fn complexity_rows_follow_the_model() {
    let mut cfg = ExperimentConfig::defaults(Simulation::Sim3, Target::G1);
    cfg.n = vec![400];
    cfg.m = vec![2, 4, 8];
    cfg.ell = vec![1, 2];
    cfg.trials = 1;
    cfg.tau = Some(20.0);
    cfg.n_test = 100;
    cfg.n_validation = 100;
    let report = run_simulation(&cfg).unwrap();
    let tau = report.records.iter().find(|r| r.criterion == Criterion::Tau).unwrap();
    assert_eq!(tau.value, 20.0);
    for ell in [1, 2] {
        let star = report.records.iter().find(|r| r.criterion == Criterion::MStar && r.context.ell == Some(ell)).unwrap();
        let expected = dkrr::experiments::m_star(400.0, 20.0, ell as f64).unwrap();
        assert_eq!(star.value, expected);
    }
    let a = report.mean(Criterion::OmegaDkrr, Some(400), Some(2), Some(1));
    let b = report.mean(Criterion::OmegaDkrr, Some(400), Some(8), Some(1));
    assert!(b < a);
}

#[test]
fn local_process_time_grows_cubically_in_shard_size() {
    use dkrr::data::{generate, partition_even, seeded_rng, SyntheticTask};
    use dkrr::distributed::run_dkrr;
    use dkrr::Kernel;

    let task = SyntheticTask::new(Target::G1, 0.2).unwrap();
    let m = 2;
    let mut points = Vec::new();
    for n in [2000, 2800, 4000, 5600] {
        let data = generate(&task, n, true, &mut seeded_rng(5, 0)).unwrap();
        let partition = partition_even(n, m, &mut seeded_rng(5, 100 + m as u64)).unwrap();
        let best = (0..2)
            .map(|_| {
                let run = run_dkrr(&data, &partition, &Kernel::Min, 1e-3, 0).unwrap();
                run.model.timings().local_process().unwrap().parallel().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min);
        points.push(((n / m) as f64, best));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().map(|(s, t)| (s.ln(), t.ln())).unzip();
    let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    eprintln!("shard size vs time {points:?}, slope {slope:.2}");
    assert!((2.3..=3.5).contains(&slope), "slope {slope}");
}
