//! Acceptance run. Prints one PASS/FAIL line per criterion and exits non-zero
//! when any fails.
//!
//! The adversarial runs are shared: the imitation, transfer and BC criteria
//! reuse the same trained rewards and policies. `ACCEPTANCE_ONLY=1,4,8` runs
//! a subset while iterating locally.

use std::cell::OnceCell;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use impedance_irl::action::{ActionKind, ActionSpace};
use impedance_irl::airl::{self, discriminator_loss, discriminator_prob_from, AirlState, TrainOutput};
use impedance_irl::approx::{Activation, GaussianPolicy, Mlp, RewardNet};
use impedance_irl::bc::{action_error, bc_fit};
use impedance_irl::envsim::{advance, Command, EnvConfig, EnvSpec, EnvState, ScenarioPerturbation, TaskKind};
use impedance_irl::evalharness::scores::relative_perf_diff;
use impedance_irl::evalharness::transfer::{
    evaluate_policy, expert_reference, find_scenario, run_transfer_suite, sweep_scenarios, Artifact, Method,
    SuiteContext, Sweep, TransferReport,
};
use impedance_irl::experts::{collect_demos, Expert};
use impedance_irl::impedance::{diagonalize_stiffness, planar_tip_jacobian, tip_to_com, GainBounds, TipStiffnessSpec};
use impedance_irl::rng::{child_seed, stream, Rng};
use impedance_irl::rollout::ObsMode;
use impedance_irl::sysid::{estimate_trajectory, estimate_window, recovery_check, RecoveryCheck, Sample};
use impedance_irl::trajectory::DemoSet;
use impedance_irl::trpo::{collect_rollouts, RewardSource};
use impirl::config::ExperimentConfig;
use impirl::run_from_args;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn main() -> ExitCode {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let lab = Lab::default();
    let criteria: [(&str, &dyn Fn(&Lab) -> Outcome); 9] = [
        ("control-law", &control_law),
        ("gradient-oracle", &gradient_oracle),
        ("gain-recovery", &gain_recovery),
        ("tip-stiffness-oracle", &tip_stiffness_oracle),
        ("airl-imitation", &airl_imitation),
        ("directional-transfer", &directional_transfer),
        ("bc-overfit", &bc_overfit),
        ("discriminator-sanity", &discriminator_sanity),
        ("determinism", &determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|v| !v.contains(&(i + 1))) {
            continue;
        }
        let t0 = Instant::now();
        let o = check(&lab);
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("{verdict} {name}: {} [{:.1}s]", o.detail, t0.elapsed().as_secs_f64());
        failed += usize::from(!o.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------------------
// Control law

/// Peak overshoot of a unit-mass step response past the goal, as a fraction of the step.
fn overshoot(k: f64, b: f64) -> f64 {
    let mut cfg = EnvConfig::for_task(TaskKind::PointReach);
    cfg.point.mass = 1.0;
    let spec = EnvSpec::from_config(&cfg).unwrap();
    let step = 0.05;
    let mut s = EnvState::at_rest(vec![spec.goal[0] + step]);
    let cmd = Command::Impedance { k: vec![k], b: vec![b] };
    let mut peak = 0.0f64;
    // ten natural periods
    let steps = (20.0 * std::f64::consts::PI / k.sqrt() / spec.control_period()).ceil() as usize;
    for _ in 0..steps {
        s = advance(&spec, &s, &cmd).unwrap();
        peak = peak.max(spec.goal[0] - s.x[0]);
    }
    peak / step
}

fn control_law(_: &Lab) -> Outcome {
    let mut worst_critical = 0.0f64;
    let mut least_light = f64::INFINITY;
    for k in [25.0f64, 100.0, 400.0, 1000.0] {
        let bc = 2.0 * k.sqrt();
        worst_critical = worst_critical.max(overshoot(k, bc));
        least_light = least_light.min(overshoot(k, 0.2 * bc));
    }
    outcome(
        worst_critical < 0.01 && least_light > 0.10,
        format!("critical damping overshoot max {worst_critical:.2e} (< 1e-2), 0.2x critical min {least_light:.3} (> 0.1)"),
    )
}

// ---------------------------------------------------------------------------
// Gradient oracle

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn gauss(r: &mut Rng) -> f64 {
    StandardNormal.sample(r)
}

fn normal_vec(r: &mut Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * gauss(r)).collect()
}

/// Worst relative error of `grad` against central differences of `f`, along
/// one random direction and on a few random coordinates.
fn fd_check(r: &mut Rng, params: &[f64], grad: &[f64], f: &dyn Fn(&[f64]) -> f64) -> f64 {
    let h = 1e-5;
    let eval_dir = |d: &[f64]| {
        let plus: Vec<f64> = params.iter().zip(d).map(|(p, d)| p + h * d).collect();
        let minus: Vec<f64> = params.iter().zip(d).map(|(p, d)| p - h * d).collect();
        (f(&plus) - f(&minus)) / (2.0 * h)
    };
    let dir = normal_vec(r, params.len(), 1.0);
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
    let dir: Vec<f64> = dir.iter().map(|x| x / norm).collect();
    let analytic: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
    let mut worst = rel_err(analytic, eval_dir(&dir));
    for _ in 0..8 {
        let i = r.gen_range(0..params.len());
        let mut e = vec![0.0; params.len()];
        e[i] = 1.0;
        worst = worst.max(rel_err(grad[i], eval_dir(&e)));
    }
    worst
}

fn gradient_oracle(_: &Lab) -> Outcome {
    let mut r = stream(11, "acceptance-grad", 0);
    let mut worst = [0.0f64; 3];
    for draw in 0..100 {
        // 2x32 tanh policy, peg-sized
        let policy = GaussianPolicy::init(6, &[32, 32], 3, &mut stream(11, "policy", draw)).unwrap();
        let mut policy = perturbed_policy(policy, &mut r);
        policy.set_log_std(&normal_vec(&mut r, 3, 0.3)).unwrap();
        let obs = normal_vec(&mut r, 6, 0.5);
        let act = normal_vec(&mut r, 3, 1.0);
        let (_, g) = policy.log_prob_grad(&obs, &act).unwrap();
        let f = |p: &[f64]| {
            let mut q = policy.clone();
            q.set_flat(p).unwrap();
            q.log_prob(&obs, &act).unwrap()
        };
        worst[0] = worst[0].max(fd_check(&mut r, &policy.flatten(), &g, &f));

        // 2x32 relu reward on (obs, action)
        let reward = RewardNet::init(6, 4, &[32, 32], &mut stream(11, "reward", draw)).unwrap();
        let mut net = reward.net.clone();
        let p: Vec<f64> = net.params().iter().map(|x| x + 0.1 * gauss(&mut r)).collect();
        net.set_params(&p).unwrap();
        let x = normal_vec(&mut r, 10, 0.5);
        let g = net.grad(&x, &[1.0]).unwrap();
        let f = |p: &[f64]| Mlp::from_flat(net.sizes(), Activation::Relu, p.to_vec()).unwrap().forward(&x).unwrap()[0];
        worst[1] = worst[1].max(fd_check(&mut r, &p, &g, &f));

        // 2x128 tanh policy on the five-step history
        let policy = GaussianPolicy::init(30, &[128, 128], 3, &mut stream(11, "history", draw)).unwrap();
        let policy = perturbed_policy(policy, &mut r);
        let obs = normal_vec(&mut r, 30, 0.5);
        let act = normal_vec(&mut r, 3, 1.0);
        let (_, g) = policy.log_prob_grad(&obs, &act).unwrap();
        let f = |p: &[f64]| {
            let mut q = policy.clone();
            q.set_flat(p).unwrap();
            q.log_prob(&obs, &act).unwrap()
        };
        worst[2] = worst[2].max(fd_check(&mut r, &policy.flatten(), &g, &f));
    }
    let max = worst.iter().copied().fold(0.0, f64::max);
    outcome(
        max < 1e-4,
        format!(
            "100 draws, max relative error policy {:.1e}, reward {:.1e}, history policy {:.1e} (< 1e-4)",
            worst[0], worst[1], worst[2]
        ),
    )
}

/// Fresh networks have a tiny output layer; spread the weights so every layer matters.
fn perturbed_policy(mut p: GaussianPolicy, r: &mut Rng) -> GaussianPolicy {
    let flat: Vec<f64> = p.flatten().iter().map(|x| x + 0.1 * gauss(r)).collect();
    p.set_flat(&flat).unwrap();
    p
}

// ---------------------------------------------------------------------------
// Gain recovery

fn gain_recovery(_: &Lab) -> Outcome {
    // noiseless: phase-expert demos replay their own gains
    let spec = EnvSpec::from_config(&EnvConfig::for_task(TaskKind::CupOnPlate)).unwrap();
    let expert = Expert::for_env(&spec);
    let demos = collect_demos(&spec, &expert, 5, None, 3).unwrap();
    let mut check = RecoveryCheck::default();
    for t in &demos.trajectories {
        let est = estimate_trajectory(t, 10, 1, None).unwrap();
        check = check.merge(recovery_check(&spec, t, &est, 10, 1, demos.with_factor).unwrap());
    }
    let clean = check.max_rel_err();

    // 0.5% force noise on well-excited windows: F = -k e - b ė, scaled to about 100 N
    let mut r = stream(5, "acceptance-noise", 0);
    let mut noisy = 0.0f64;
    for _ in 0..100 {
        let k: f64 = r.gen_range(50.0..2000.0);
        let b = r.gen_range(0.5..4.0) * k.sqrt();
        let e_amp = 50.0 / k;
        let v_amp = 50.0 / b;
        let es: Vec<Vec<f64>> = (0..10).map(|_| vec![r.gen_range(-e_amp..e_amp)]).collect();
        let vs: Vec<Vec<f64>> = (0..10).map(|_| vec![r.gen_range(-v_amp..v_amp)]).collect();
        let fs: Vec<Vec<f64>> = es
            .iter()
            .zip(&vs)
            .map(|(e, v)| vec![-k * e[0] - b * v[0] + 0.5 * gauss(&mut r)])
            .collect();
        let samples: Vec<Sample<'_>> = es
            .iter()
            .zip(&vs)
            .zip(&fs)
            .map(|((e, edot), force)| Sample { e, edot, force })
            .collect();
        let est = estimate_window(&samples, 10, None, None).unwrap();
        noisy = noisy.max(((est.raw_k[0] - k) / k).abs()).max(((est.raw_b[0] - b) / b).abs());
    }
    outcome(
        clean <= 1e-6 && check.windows_compared > 0 && noisy <= 0.05,
        format!(
            "noiseless max relative error {clean:.1e} over {} windows ({} blend/clamped skipped, <= 1e-6); \
             0.5% noise max relative error {noisy:.3} over 100 windows (<= 0.05)",
            check.windows_compared, check.windows_skipped
        ),
    )
}

// ---------------------------------------------------------------------------
// Tip stiffness

/// Tip stiffness diag(kx, kz, kθ) at offset r below the COM, moved to the COM
/// frame and reduced to a diagonal, written out by hand.
fn tip_by_hand(k: [f64; 3], r: f64, theta: f64, e: [f64; 3], bounds: &GainBounds) -> [f64; 3] {
    let (s, c) = theta.sin_cos();
    let [kx, kz, kt] = k;
    let m = [
        [kx, 0.0, kx * r * c],
        [0.0, kz, kz * r * s],
        [kx * r * c, kz * r * s, kx * r * r * c * c + kz * r * r * s * s + kt],
    ];
    let mut out = [0.0; 3];
    for i in 0..3 {
        let ke: f64 = (0..3).map(|j| m[i][j] * e[j]).sum();
        let v = if e[i].abs() > 1e-4 { ke / e[i] } else { m[i][i] };
        out[i] = v.clamp(bounds.k_min[i], bounds.k_max[i]);
    }
    out
}

fn tip_stiffness_oracle(_: &Lab) -> Outcome {
    let bounds = GainBounds::standard(&[false, false, true], false);
    let configs = [
        ([1500.0, 40.0, 5.0], 0.05, -0.035, [0.004, 0.03, 0.01]),
        ([800.0, 800.0, 20.0], 0.05, 0.0, [0.002, -0.01, 0.02]),
        ([1200.0, 300.0, 10.0], 0.08, 0.2, [-0.01, 0.05, -0.03]),
        ([500.0, 1000.0, 50.0], 0.03, -0.5, [0.0, 0.02, 0.05]),
        ([2000.0, 60.0, 2.0], 0.05, 1.0, [0.03, 0.0, -0.2]),
    ];
    let mut worst = 0.0f64;
    for (k, r, theta, e) in configs {
        let spec = TipStiffnessSpec {
            k_tip: nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&k)),
            j_tip: planar_tip_jacobian(theta, r),
        };
        let k_com = tip_to_com(&spec).unwrap();
        let got = diagonalize_stiffness(&k_com, &e, 1e-4, &bounds).unwrap();
        let want = tip_by_hand(k, r, theta, e, &bounds);
        for i in 0..3 {
            worst = worst.max((got[i] - want[i]).abs() / want[i].abs().max(1.0));
        }
    }
    outcome(worst <= 1e-10, format!("5 configurations, max deviation {worst:.1e} (<= 1e-10)"))
}

// ---------------------------------------------------------------------------
// Adversarial training shared by imitation, transfer and BC

const SEEDS: u64 = 3;
const MAX_ITERATIONS: usize = 200;
const EVAL_EVERY: usize = 10;
const EVAL_EPISODES: usize = 60;

/// Best evaluation of one method: the first checkpoint meeting the imitation
/// bar, or the closest one when none does.
#[derive(Clone)]
struct Trained {
    seed: u64,
    iteration: usize,
    success_rate: f64,
    rpd: f64,
    met: bool,
    reward: RewardNet,
}

struct TaskRun {
    cfg: ExperimentConfig,
    train_spec: EnvSpec,
    expert: Expert,
    expert_score: f64,
    demos: DemoSet,
    gain: Trained,
    force: Trained,
    minutes: f64,
}

#[derive(Default)]
struct Lab {
    peg: OnceCell<TaskRun>,
    cup: OnceCell<TaskRun>,
    peg_transfer: OnceCell<(Vec<TransferReport>, GaussianPolicy)>,
    cup_transfer: OnceCell<Vec<TransferReport>>,
}

/// Acceptance budget: the shipped task defaults with the rollout batch cut so
/// the full suite fits a desktop hour on one core.
fn task_config(task: TaskKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults(task);
    cfg.trpo.batch_size = match task {
        TaskKind::CupOnPlate => 5000,
        _ => 4000,
    };
    cfg.airl.iterations = MAX_ITERATIONS;
    cfg.transfer.episodes = EVAL_EPISODES;
    cfg
}

fn training_scenario(cfg: &ExperimentConfig) -> ScenarioPerturbation {
    let sweep = match cfg.task {
        TaskKind::PegInHole => Sweep::Tilt,
        _ => Sweep::Start,
    };
    sweep_scenarios(&cfg.env, sweep)
        .unwrap()
        .into_iter()
        .find(|s| s.training)
        .unwrap()
}

impl Lab {
    fn task(&self, task: TaskKind) -> &TaskRun {
        let cell = match task {
            TaskKind::PegInHole => &self.peg,
            _ => &self.cup,
        };
        cell.get_or_init(|| prepare(task))
    }
}

fn prepare(task: TaskKind) -> TaskRun {
    let t0 = Instant::now();
    let cfg = task_config(task);
    let base = EnvSpec::from_config(&cfg.env).unwrap();
    let train_spec = base.perturbed(&training_scenario(&cfg)).unwrap();
    let expert = Expert::for_env(&base);
    let noise = (cfg.demos.noise_sigma > 0.0).then_some(impedance_irl::experts::NoisePolicy {
        sigma: cfg.demos.noise_sigma,
    });
    let demos = collect_demos(&train_spec, &expert, cfg.demos.count, noise, child_seed(cfg.seed, "gen-demos", 0)).unwrap();
    let eval_seed = child_seed(cfg.seed, "acceptance-eval", 0);
    let reference = expert_reference(&train_spec, &expert, &cfg.score, EVAL_EPISODES, eval_seed).unwrap();
    let run = |kind, seeds| train_method(&cfg, &train_spec, &demos, kind, seeds, reference.mean_score, eval_seed);
    let gain = run(ActionKind::Gain, SEEDS);
    // force-space training only feeds the transfer comparison
    let force = run(ActionKind::Force, 1);
    TaskRun {
        cfg,
        train_spec,
        expert,
        expert_score: reference.mean_score,
        demos,
        gain,
        force,
        minutes: t0.elapsed().as_secs_f64() / 60.0,
    }
}

/// Train up to `seeds` runs of at most `MAX_ITERATIONS`, evaluating every
/// `EVAL_EVERY` iterations and stopping at the first checkpoint with
/// success >= 90% and relative performance difference <= 0.15.
fn train_method(
    cfg: &ExperimentConfig,
    spec: &EnvSpec,
    demos: &DemoSet,
    kind: ActionKind,
    seeds: u64,
    expert_score: f64,
    eval_seed: u64,
) -> Trained {
    let space = ActionSpace::standard(kind, spec, demos.with_factor);
    let mut best: Option<Trained> = None;
    for s in 0..seeds {
        let seed = child_seed(cfg.seed, &format!("train {}-airl", kind.label()), s);
        let mut state = AirlState::new(demos, space.clone(), cfg.observation, &cfg.airl, &cfg.trpo, seed).unwrap();
        let mut met = false;
        airl::train(&mut state, spec, &cfg.airl, &cfg.trpo, &cfg.score, seed, &TrainOutput::default(), |st, row| {
            if (row.iteration + 1) % EVAL_EVERY != 0 {
                return true;
            }
            let (sum, _) =
                evaluate_policy(spec, st.policy(), &st.space, st.obs, &cfg.score, EVAL_EPISODES, eval_seed).unwrap();
            let rpd = relative_perf_diff(sum.mean_score, expert_score).unwrap();
            eprintln!(
                "  {} {}-airl seed {s} it {}: success {:.3} rpd {rpd:.3}",
                spec.kind().label(),
                kind.label(),
                row.iteration + 1,
                sum.success_rate
            );
            met = sum.success_rate >= 0.9 && rpd <= 0.15;
            let better = best.as_ref().map_or(true, |b| {
                (sum.success_rate >= 0.9, -rpd) > (b.success_rate >= 0.9, -b.rpd)
            });
            if better || met {
                best = Some(Trained {
                    seed: s,
                    iteration: row.iteration + 1,
                    success_rate: sum.success_rate,
                    rpd,
                    met,
                    reward: st.reward().clone(),
                });
            }
            !met
        })
        .unwrap();
        if met {
            break;
        }
    }
    best.expect("at least one evaluation")
}

fn airl_imitation(lab: &Lab) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for task in [TaskKind::PegInHole, TaskKind::CupOnPlate] {
        let run = lab.task(task);
        let g = &run.gain;
        pass &= g.met;
        parts.push(format!(
            "{task}: success {:.3} rpd {:.3} at seed {} iteration {} (expert score {:.4}, {:.1} min)",
            g.success_rate, g.rpd, g.seed, g.iteration, run.expert_score, run.minutes
        ));
    }
    outcome(pass, format!("{} (needs >= 0.9 and <= 0.15)", parts.join("; ")))
}

// ---------------------------------------------------------------------------
// Transfer

fn suite(run: &TaskRun, methods: Vec<(Method, Option<Artifact>)>, labels: &[&str]) -> Vec<TransferReport> {
    let scenarios: Vec<ScenarioPerturbation> =
        labels.iter().map(|l| find_scenario(&run.cfg.env, l).unwrap()).collect();
    let s = run.cfg.transfer.suite();
    let ctx = SuiteContext {
        env: &run.cfg.env,
        expert: &run.expert,
        weights: &run.cfg.score,
        trpo: &run.cfg.trpo,
        suite: &s,
        seed: child_seed(run.cfg.seed, "transfer", 0),
    };
    let (reports, _) = run_transfer_suite(&ctx, &methods, &scenarios, |r| {
        eprintln!("  {} @ {}: success {:.3} rpd {:.3}", r.method, r.scenario, r.success_rate, r.relative_perf_diff)
    })
    .unwrap();
    reports
}

fn airl_methods(run: &TaskRun) -> Vec<(Method, Option<Artifact>)> {
    vec![
        ("gain-airl".parse().unwrap(), Some(Artifact::Reward(run.gain.reward.clone()))),
        ("force-airl".parse().unwrap(), Some(Artifact::Reward(run.force.reward.clone()))),
    ]
}

impl Lab {
    fn peg_transfer(&self) -> &(Vec<TransferReport>, GaussianPolicy) {
        self.peg_transfer.get_or_init(|| {
            let run = self.task(TaskKind::PegInHole);
            let bc = train_bc(run);
            let mut methods = airl_methods(run);
            methods.push(("gain-bc".parse().unwrap(), Some(Artifact::Policy(bc.clone()))));
            (suite(run, methods, &["2", "0.3"]), bc)
        })
    }

    fn cup_transfer(&self) -> &Vec<TransferReport> {
        self.cup_transfer.get_or_init(|| {
            let run = self.task(TaskKind::CupOnPlate);
            suite(run, airl_methods(run), &["T1"])
        })
    }
}

fn cell<'a>(reports: &'a [TransferReport], method: &str, scenario: &str) -> &'a TransferReport {
    reports
        .iter()
        .find(|r| r.method == method && r.scenario.starts_with(scenario))
        .unwrap_or_else(|| panic!("no {method} @ {scenario} row"))
}

fn directional_transfer(lab: &Lab) -> Outcome {
    let (peg, _) = lab.peg_transfer();
    let cup = lab.cup_transfer();
    let tilt = (cell(peg, "gain-airl", "tilt +2"), cell(peg, "force-airl", "tilt +2"));
    let mesh = (cell(peg, "gain-airl", "mesh 0.3"), cell(peg, "force-airl", "mesh 0.3"));
    let t1 = (cell(cup, "gain-airl", "T1"), cell(cup, "force-airl", "T1"));
    let tilt_ok = tilt.0.success_rate - tilt.1.success_rate >= 0.5;
    let mesh_ok = mesh.0.success_rate > mesh.1.success_rate;
    let t1_ok = t1.0.relative_perf_diff < t1.1.relative_perf_diff;
    outcome(
        tilt_ok && mesh_ok && t1_ok,
        format!(
            "tilt +2 success gain {:.3} vs force {:.3} (gap >= 0.5: {tilt_ok}); mesh 0.3 success gain {:.3} vs force {:.3} \
             (gain higher: {mesh_ok}); cup T1 rpd gain {:.3} vs force {:.3} (gain lower: {t1_ok})",
            tilt.0.success_rate,
            tilt.1.success_rate,
            mesh.0.success_rate,
            mesh.1.success_rate,
            t1.0.relative_perf_diff,
            t1.1.relative_perf_diff
        ),
    )
}

// ---------------------------------------------------------------------------
// Behavior cloning

fn train_bc(run: &TaskRun) -> GaussianPolicy {
    let cfg = &run.cfg;
    let space = ActionSpace::standard(ActionKind::Gain, &run.train_spec, run.demos.with_factor);
    let seed = child_seed(cfg.seed, "train gain-bc", 0);
    let mut r = stream(seed, "bc", 0);
    let init = GaussianPolicy::init(cfg.observation.obs_dim(run.train_spec.dof), &cfg.bc.hidden, space.raw_dim(), &mut r)
        .unwrap();
    bc_fit(&run.demos, &space, cfg.observation, &init, &cfg.bc, &mut r).unwrap().0
}

fn bc_overfit(lab: &Lab) -> Outcome {
    let run = lab.task(TaskKind::PegInHole);
    let (reports, bc) = lab.peg_transfer();
    // fresh expert episodes from the training scenario, unseen by the fit
    let held = collect_demos(&run.train_spec, &run.expert, 10, None, child_seed(run.cfg.seed, "held-out", 0)).unwrap();
    let space = ActionSpace::standard(ActionKind::Gain, &run.train_spec, held.with_factor);
    let err = action_error(bc, &space, &held.pairs(&space, false).unwrap()).unwrap();
    let bc_tilt = cell(reports, "gain-bc", "tilt +2").success_rate;
    let airl_tilt = cell(reports, "gain-airl", "tilt +2").success_rate;
    outcome(
        err < 0.05 && bc_tilt < airl_tilt,
        format!(
            "held-out action error {err:.4} (< 0.05); tilt +2 success gain-bc {bc_tilt:.3} vs gain-airl {airl_tilt:.3} (bc lower)"
        ),
    )
}

// ---------------------------------------------------------------------------
// Discriminator

fn discriminator_sanity(_: &Lab) -> Outcome {
    let cfg = ExperimentConfig::defaults(TaskKind::PointReach);
    let spec = EnvSpec::from_config(&cfg.env).unwrap();
    let expert = Expert::for_env(&spec);
    let demos = collect_demos(&spec, &expert, 10, None, 1).unwrap();
    let space = ActionSpace::standard(ActionKind::Gain, &spec, false);
    let trpo = impedance_irl::trpo::TrustRegionConfig {
        batch_size: 1000,
        traj_len: spec.horizon,
        ..cfg.trpo.clone()
    };
    let mut losses = Vec::new();
    for seed in 0..5 {
        let st = AirlState::new(&demos, space.clone(), ObsMode::Plain, &cfg.airl, &trpo, seed).unwrap();
        let agent = impedance_irl::rollout::Agent {
            policy: st.policy(),
            space: &st.space,
            obs: st.obs,
        };
        let batch = collect_rollouts(&spec, &agent, RewardSource::Zero, &cfg.score, &trpo, seed, 0).unwrap();
        let demo = airl::demo_samples(&st.demo_pairs, st.policy()).unwrap();
        let pol = airl::policy_samples(&batch);
        losses.push(discriminator_loss(st.reward(), &demo, &pol, cfg.airl.policy_loss).unwrap());
    }
    let in_range = losses.iter().all(|l| (1.2..=1.6).contains(l));
    let mut r = stream(3, "acceptance-disc", 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let v: f64 = r.gen_range(-50.0..50.0);
        worst = worst.max((discriminator_prob_from(v, v) - 0.5).abs());
    }
    let shown: Vec<String> = losses.iter().map(|l| format!("{l:.3}")).collect();
    outcome(
        in_range && worst <= 1e-12,
        format!(
            "initial loss on point-reach over 5 seeds [{}] (in [1.2, 1.6]); |D - 0.5| at r = log pi max {worst:.1e} (<= 1e-12)",
            shown.join(", ")
        ),
    )
}

// ---------------------------------------------------------------------------
// Determinism

const PIPELINE: [&[&str]; 3] = [
    &["gen-demos", "--count", "4"],
    &["train", "--method", "gain-airl", "--iterations", "5"],
    &["transfer", "--scenario", "2", "--method", "gain-airl", "--episodes", "6"],
];

fn pipeline(dir: &Path, jobs: &str) -> bool {
    let common = [
        "impirl",
        "--out",
        dir.to_str().unwrap(),
        "--seed",
        "17",
        "--jobs",
        jobs,
        "--set",
        "trpo.batch_size=600",
        "--set",
        "transfer.reopt.iterations=3",
        "--set",
        "transfer.reopt.restarts=2",
        "--set",
        "transfer.reopt.keep=1",
    ];
    PIPELINE.iter().all(|cmd| {
        let args: Vec<&str> = common.iter().chain(cmd.iter()).copied().collect();
        run_from_args(args) == 0
    })
}

fn determinism(_: &Lab) -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    if !(pipeline(a.path(), "1") && pipeline(b.path(), "4")) {
        return outcome(false, "pipeline command failed");
    }
    let files = ["demos.jsonl", "gain-airl/train_log.csv", "transfer/transfer.csv", "transfer/deviations.csv"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| fs::read(a.path().join(f)).ok() != fs::read(b.path().join(f)).ok())
        .collect();
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("gen-demos, 5 training iterations and 1 transfer scenario byte-identical at --jobs 1 and 4 ({})", files.join(", "))
        } else {
            format!("differs between --jobs 1 and 4: {}", differing.join(", "))
        },
    )
}
