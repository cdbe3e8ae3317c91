use lanerl_core::codec::{Reader, Writer};
use lanerl_core::ddpg::{perturb, AgentConfig, AgentNets, StateBatch, StateInput, TransitionBatch};
use lanerl_core::env::Action;
use lanerl_core::nn::Tensor;
use lanerl_core::noise::OuNoise;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn vector_agent(dim: usize, cfg: AgentConfig, seed: u64) -> AgentNets {
    AgentNets::new(&cfg, StateInput::Vector { dim }, 10.0, seed).unwrap()
}

fn states(rows: &[Vec<f32>]) -> StateBatch {
    let n = rows.len();
    StateBatch { input: Tensor::from_rows(rows).unwrap(), scalars: Tensor::zeros(&[n, 2]) }
}

fn random_states(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> StateBatch {
    let rows: Vec<Vec<f32>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    let scalars: Vec<f32> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    StateBatch { input: Tensor::from_rows(&rows).unwrap(), scalars: Tensor::from_vec(&[n, 2], scalars).unwrap() }
}

fn set_constant_critic(params: &mut lanerl_core::nn::ParamSet, value: f32) {
    for (name, t) in params.iter_mut() {
        let v = if name == "critic_out.bias" { value } else { 0.0 };
        t.data_mut().iter_mut().for_each(|x| *x = v);
    }
}

fn batch(rewards: Vec<f64>, dones: Vec<bool>, dim: usize) -> TransitionBatch {
    let n = rewards.len();
    let s = states(&vec![vec![0.5; dim]; n]);
    TransitionBatch { states: s.clone(), actions: Tensor::zeros(&[n, 2]), rewards, dones, next_states: s }
}

#[test]
fn terminal_and_bootstrapped_targets() {
    let mut agent = vector_agent(3, AgentConfig::default(), 0);
    set_constant_critic(&mut agent.target.critic, 2.0);
    let b = batch(vec![3.2, 1.0], vec![true, false], 3);
    let y = agent.compute_critic_targets(&b).unwrap();
    assert_eq!(y[0], 3.2);
    assert!((y[1] - 2.8).abs() < 1e-12);

    let myopic = vector_agent(3, AgentConfig { gamma: 0.0, ..Default::default() }, 0);
    let b = batch(vec![0.3, -1.0, 7.0], vec![false, false, true], 3);
    assert_eq!(myopic.compute_critic_targets(&b).unwrap(), vec![0.3, -1.0, 7.0]);
}

#[test]
fn critic_at_its_fixed_point_does_not_move() {
    let mut agent = vector_agent(3, AgentConfig::default(), 1);
    set_constant_critic(&mut agent.online.critic, 0.0);
    set_constant_critic(&mut agent.target.critic, 0.0);
    let before = agent.online.clone();
    let step = agent.critic_update(&batch(vec![0.0; 5], vec![false; 5], 3)).unwrap();
    assert_eq!(step.td_errors.len(), 5);
    assert!(step.td_errors.iter().all(|&d| d == 0.0));
    assert!(agent.online.critic.max_abs_diff(&before.critic).unwrap() < 1e-8);
}

/// Exact value iteration on the chain s0 → s1 → terminal with unit rewards.
fn chain_values(gamma: f64) -> [f64; 2] {
    let mut v = [0.0f64; 2];
    loop {
        let next = [1.0 + gamma * v[1], 1.0];
        if next == v {
            return v;
        }
        v = next;
    }
}

#[test]
fn critic_learns_two_state_chain() {
    let gamma = 0.9;
    let oracle = chain_values(gamma);
    assert!((oracle[0] - 1.9).abs() < 1e-12);
    let cfg = AgentConfig { gamma, critic_lr: 1e-3, tau: 0.05, ..Default::default() };
    let mut agent = vector_agent(2, cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 32;
    let mut rows = Vec::new();
    let mut next = Vec::new();
    let mut dones = Vec::new();
    for i in 0..n {
        let first = i % 2 == 0;
        rows.push(if first { vec![1.0, 0.0] } else { vec![0.0, 1.0] });
        next.push(if first { vec![0.0, 1.0] } else { vec![0.0, 0.0] });
        dones.push(!first);
    }
    let actions: Vec<f32> = (0..n).flat_map(|_| [rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0)]).collect();
    let b = TransitionBatch {
        states: states(&rows),
        actions: Tensor::from_vec(&[n, 2], actions).unwrap(),
        rewards: vec![1.0; n],
        dones,
        next_states: states(&next),
    };
    for step in 0..5000 {
        if step == 4000 {
            agent.adam.critic.lr = 1e-4;
        }
        agent.critic_update(&b).unwrap();
        agent.soft_update_targets().unwrap();
    }
    let probe = states(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    for a in [[-1.0f32, 0.0], [0.0, 0.5], [1.0, 1.0]] {
        let acts = Tensor::from_vec(&[2, 2], [a, a].concat()).unwrap();
        let q = agent.q_values(&probe, &acts).unwrap();
        assert!((q[0] - oracle[0]).abs() < 1e-3, "Q(s0) = {}", q[0]);
        assert!((q[1] - oracle[1]).abs() < 1e-3, "Q(s1) = {}", q[1]);
    }
}

#[test]
fn actor_climbs_quadratic_critic_to_its_argmax() {
    let mut agent = vector_agent(4, AgentConfig { actor_lr: 1e-3, ..Default::default() }, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let s = random_states(16, 4, &mut rng);
    for _ in 0..3000 {
        agent
            .actor_update_with(&s.input, &s.scalars, |a| {
                let n = a.batch() as f32;
                let g: Vec<f32> = a.data().chunks(2).flat_map(|r| [-2.0 * (r[0] - 0.3) / n, 0.0]).collect();
                Tensor::from_vec(a.shape(), g)
            })
            .unwrap();
    }
    let a = agent.policy(&s).unwrap();
    for row in a.data().chunks(2) {
        assert!((row[0] - 0.3).abs() < 0.01, "steering {}", row[0]);
    }
}

#[test]
fn zero_action_gradient_leaves_actor_unchanged() {
    let mut agent = vector_agent(4, AgentConfig::default(), 9);
    let before = agent.online.actor.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = random_states(8, 4, &mut rng);
    agent.actor_update_with(&s.input, &s.scalars, |a| Ok(Tensor::zeros(a.shape()))).unwrap();
    assert_eq!(agent.online.actor, before);
}

#[test]
fn actor_stays_in_the_action_box_under_random_updates() {
    let mut agent = vector_agent(3, AgentConfig { actor_lr: 1e-2, grad_clip: 10.0, ..Default::default() }, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..10_000 {
        let s = random_states(4, 3, &mut rng);
        let scale = 10f32.powf(rng.random_range(-2.0..3.0));
        let g: Vec<f32> = (0..8).map(|_| scale * rng.sample::<f32, _>(StandardNormal)).collect();
        agent.actor_update_with(&s.input, &s.scalars, |_| Tensor::from_vec(&[4, 2], g)).unwrap();
        let a = agent.policy(&s).unwrap();
        for row in a.data().chunks(2) {
            assert!((-1.0..=1.0).contains(&row[0]) && (0.0..=1.0).contains(&row[1]), "{row:?}");
        }
    }
    for _ in 0..10_000 {
        let s = random_states(1, 3, &mut rng);
        let act = agent.act(&s).unwrap();
        assert!((-1.0..=1.0).contains(&act.steering) && (0.0..=10.0).contains(&act.speed_kmh));
    }
}

#[test]
fn fresh_actor_on_zero_input_steers_straight() {
    let agent = AgentNets::new(&AgentConfig::default(), StateInput::Image { height: 64, width: 64 }, 10.0, 0).unwrap();
    let s = StateBatch { input: Tensor::zeros(&[1, 1, 64, 64]), scalars: Tensor::zeros(&[1, 2]) };
    let a = agent.act(&s).unwrap();
    assert_eq!(a.steering, 0.0);
    assert_eq!(a.speed_kmh, 5.0);
    assert_eq!(agent.act(&s).unwrap(), a);
}

#[test]
fn noiseless_ou_reproduces_the_policy_action() {
    let agent = vector_agent(3, AgentConfig::default(), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = random_states(1, 3, &mut rng);
    let mut ou = OuNoise::new(vec![0.0, 0.0], 1.0, 0.0, 250.0);
    for _ in 0..3 {
        assert_eq!(agent.act_noisy(&s, &mut ou, 1.0, &mut rng).unwrap(), agent.act(&s).unwrap());
    }
}

#[test]
fn noise_beyond_the_box_is_clamped() {
    let a = perturb(Action::new(0.9, 9.5), &[0.5, 2.0], 1.0, 10.0);
    assert_eq!(a, Action::new(1.0, 10.0));
    let a = perturb(Action::new(-0.9, 0.5), &[-0.5, -2.0], 1.0, 10.0);
    assert_eq!(a, Action::new(-1.0, 0.0));
}

#[test]
fn noisy_actions_average_to_the_policy_action() {
    let agent = vector_agent(3, AgentConfig::default(), 4);
    let s = states(&[vec![0.0; 3]]);
    let base = agent.act(&s).unwrap();
    assert_eq!(base.steering, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 10_000;
    let draws: Vec<Action> = (0..n)
        .map(|_| {
            // A fresh process makes every draw an independent first step.
            let mut ou = OuNoise::new(vec![0.0, 0.0], 0.6, 0.4, 250.0);
            agent.act_noisy(&s, &mut ou, 1.0, &mut rng).unwrap()
        })
        .collect();
    for (get, want) in [(0usize, base.steering), (1, base.speed_kmh)] {
        let xs: Vec<f64> = draws.iter().map(|a| if get == 0 { a.steering } else { a.speed_kmh }).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((mean - want).abs() < 3.0 * sd / (n as f64).sqrt(), "dim {get}: {mean} vs {want}");
    }
}

#[test]
fn unit_tau_targets_follow_the_literal_bellman_equation() {
    let cfg = AgentConfig { tau: 1.0, gamma: 0.9, critic_lr: 1e-2, actor_lr: 1e-2, ..Default::default() };
    let mut agent = vector_agent(3, cfg, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let s = random_states(6, 3, &mut rng);
    let s2 = random_states(6, 3, &mut rng);
    let b = TransitionBatch {
        states: s,
        actions: Tensor::full(&[6, 2], 0.5),
        rewards: (0..6).map(|i| i as f64 * 0.1).collect(),
        dones: vec![false, true, false, false, true, false],
        next_states: s2.clone(),
    };
    agent.train_step(&b).unwrap();
    let q_next = agent.q_values(&s2, &agent.policy(&s2).unwrap()).unwrap();
    let y = agent.compute_critic_targets(&b).unwrap();
    for i in 0..6 {
        let literal = b.rewards[i] + 0.9 * (1.0 - b.dones[i] as u8 as f64) * q_next[i];
        assert!((y[i] - literal).abs() < 1e-12);
    }
}

#[test]
fn target_layout_matches_online_and_state_round_trips() {
    let mut agent = AgentNets::new(&AgentConfig::default(), StateInput::Image { height: 32, width: 32 }, 10.0, 3).unwrap();
    agent.target.trunk.as_ref().unwrap().check_layout(agent.online.trunk.as_ref().unwrap()).unwrap();
    agent.target.actor.check_layout(&agent.online.actor).unwrap();
    agent.target.critic.check_layout(&agent.online.critic).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img: Vec<f32> = (0..4 * 32 * 32).map(|_| rng.random()).collect();
    let s = StateBatch {
        input: Tensor::from_vec(&[4, 1, 32, 32], img).unwrap(),
        scalars: Tensor::full(&[4, 2], 0.2),
    };
    let b = TransitionBatch {
        states: s.clone(),
        actions: Tensor::full(&[4, 2], 0.1),
        rewards: vec![0.2; 4],
        dones: vec![false; 4],
        next_states: s,
    };
    agent.train_step(&b).unwrap();
    let mut w = Writer::new();
    agent.save(&mut w);
    let bytes = w.into_bytes();
    let mut fresh = AgentNets::new(&AgentConfig::default(), StateInput::Image { height: 32, width: 32 }, 10.0, 99).unwrap();
    let mut r = Reader::new(&bytes);
    fresh.load(&mut r).unwrap();
    r.finish().unwrap();
    assert_eq!(fresh, agent);
}
