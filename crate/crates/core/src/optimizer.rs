//! Adaptive NSGA-II over allocation plans.
//!
//! Plans are encoded densely (candidate index → role index or none). Plans
//! that break group rules are penalized by `penalty · total violation` on
//! every objective, and whenever the combined parent+offspring population
//! contains a violating plan the diversity weight used in weighted
//! aggregations grows by a factor `1 + ρ` (once per generation).

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GesaError, Result};
use crate::model::{AllocationPlan, Constraint, ConstraintSet, Dataset, ObjectiveVector};
use crate::objectives::{entropy_of_counts, evaluate_constraints, Genome, Problem};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub population_size: usize,
    pub max_generations: usize,
    pub crossover_rate: f64,
    /// Per-candidate reassignment probability.
    pub mutation_rate: f64,
    pub penalty: f64,
    pub rho: f64,
    pub seed: u64,
    /// Merit, diversity and preference weights for weighted aggregation.
    pub objective_weights: [f64; 3],
    pub stagnation_generations: usize,
    pub stagnation_tolerance: f64,
    /// Seed the initial population with the greedy max-merit plan.
    pub greedy_seed: bool,
    /// Number of [`greedy_tradeoff`] plans seeded into the initial
    /// population, at `lambda = 0.02, 0.04, 0.08, ...`.
    pub tradeoff_seeds: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            population_size: 100,
            max_generations: 200,
            crossover_rate: 0.9,
            mutation_rate: 0.02,
            penalty: 1.0,
            rho: 0.25,
            seed: 0,
            objective_weights: [0.4, 0.3, 0.3],
            stagnation_generations: 10,
            stagnation_tolerance: 1e-6,
            greedy_seed: true,
            tradeoff_seeds: 8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(GesaError::InvalidArgument(msg.into()));
        if self.population_size < 4 || self.population_size % 2 != 0 {
            return bad("population size must be even and at least 4");
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) || !(0.0..=1.0).contains(&self.mutation_rate) {
            return bad("crossover and mutation rates must lie in [0, 1]");
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return bad("rho must be positive");
        }
        if !(self.penalty >= 0.0) || !self.penalty.is_finite() {
            return bad("penalty must be non-negative");
        }
        if self.objective_weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return bad("objective weights must be non-negative");
        }
        Ok(())
    }
}

/// Strict Pareto dominance under maximization.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    debug_assert_eq!(a.len(), b.len());
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return false;
        }
        if x > y {
            strict = true;
        }
    }
    strict
}

/// Fast non-dominated sorting. Fronts are index lists in ascending order.
pub fn non_dominated_sort<P: AsRef<[f64]>>(points: &[P]) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut counts = vec![0usize; n];
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (points[i].as_ref(), points[j].as_ref());
            if dominates(a, b) {
                dominated_by[i].push(j);
                counts[j] += 1;
            } else if dominates(b, a) {
                dominated_by[j].push(i);
                counts[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| counts[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by[i] {
                counts[j] -= 1;
                if counts[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each member of one front.
pub fn crowding_distance<P: AsRef<[f64]>>(front: &[P]) -> Vec<f64> {
    let n = front.len();
    let mut dist = vec![0.0; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let k = front[0].as_ref().len();
    for obj in 0..k {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| front[a].as_ref()[obj].total_cmp(&front[b].as_ref()[obj]).then(a.cmp(&b)));
        let lo = front[order[0]].as_ref()[obj];
        let hi = front[order[n - 1]].as_ref()[obj];
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        let span = hi - lo;
        if span <= 0.0 {
            continue;
        }
        for w in 1..n - 1 {
            let gap = front[order[w + 1]].as_ref()[obj] - front[order[w - 1]].as_ref()[obj];
            dist[order[w]] += gap / span;
        }
    }
    dist
}

/// Volume dominated by `points` above `reference` in three objectives.
/// Coordinates below the reference are clipped to it.
pub fn hypervolume(points: &[[f64; 3]], reference: [f64; 3]) -> f64 {
    let mut pts: Vec<[f64; 3]> = points
        .iter()
        .map(|p| [p[0] - reference[0], p[1] - reference[1], p[2] - reference[2]])
        .filter(|p| p.iter().all(|&v| v > 0.0))
        .collect();
    if pts.is_empty() {
        return 0.0;
    }
    pts.sort_by(|a, b| b[2].total_cmp(&a[2]));
    let mut levels: Vec<f64> = pts.iter().map(|p| p[2]).collect();
    levels.dedup();
    levels.push(0.0);
    let mut volume = 0.0;
    let mut active: Vec<[f64; 2]> = Vec::new();
    let mut next = 0;
    for w in levels.windows(2) {
        while next < pts.len() && pts[next][2] >= w[0] {
            active.push([pts[next][0], pts[next][1]]);
            next += 1;
        }
        volume += area_2d(&mut active) * (w[0] - w[1]);
    }
    volume
}

fn area_2d(points: &mut [[f64; 2]]) -> f64 {
    points.sort_by(|a, b| b[0].total_cmp(&a[0]));
    let mut area = 0.0;
    let mut best_y = 0.0f64;
    for (i, p) in points.iter().enumerate() {
        best_y = best_y.max(p[1]);
        let next_x = points.get(i + 1).map_or(0.0, |q| q[0]);
        area += (p[0] - next_x) * best_y;
    }
    area
}

fn role_loads(genome: &[Option<u32>], roles: usize) -> Vec<u32> {
    let mut load = vec![0u32; roles];
    for j in genome.iter().flatten() {
        load[*j as usize] += 1;
    }
    load
}

/// Unassigns overflow on every over-capacity role, keeping the candidates
/// with the smallest ids.
fn repair(genome: &mut [Option<u32>], capacities: &[u32]) {
    let mut load = vec![0u32; capacities.len()];
    for g in genome.iter_mut() {
        if let Some(j) = *g {
            if load[j as usize] >= capacities[j as usize] {
                *g = None;
            } else {
                load[j as usize] += 1;
            }
        }
    }
}

/// Uniform per-candidate exchange followed by capacity repair.
pub fn crossover<R: Rng>(a: &[Option<u32>], b: &[Option<u32>], capacities: &[u32], rng: &mut R) -> Result<(Genome, Genome)> {
    if a.len() != b.len() {
        return Err(GesaError::DimensionMismatch { expected: a.len(), actual: b.len() });
    }
    let (mut x, mut y) = (a.to_vec(), b.to_vec());
    for i in 0..x.len() {
        if rng.random_bool(0.5) {
            std::mem::swap(&mut x[i], &mut y[i]);
        }
    }
    repair(&mut x, capacities);
    repair(&mut y, capacities);
    Ok((x, y))
}

/// Reassigns each candidate with probability `rate` to a uniformly chosen
/// option among other roles with spare capacity and "unassigned".
pub fn mutate<R: Rng>(genome: &mut [Option<u32>], capacities: &[u32], rate: f64, rng: &mut R) {
    if rate <= 0.0 {
        return;
    }
    let mut load = role_loads(genome, capacities.len());
    let mut options: Vec<Option<u32>> = Vec::with_capacity(capacities.len() + 1);
    for i in 0..genome.len() {
        if !rng.random_bool(rate) {
            continue;
        }
        let current = genome[i];
        if let Some(j) = current {
            load[j as usize] -= 1;
        }
        options.clear();
        options.extend(
            (0..capacities.len() as u32)
                .filter(|&j| Some(j) != current && load[j as usize] < capacities[j as usize])
                .map(Some),
        );
        options.push(None);
        let pick = options[rng.random_range(0..options.len())];
        if let Some(j) = pick {
            load[j as usize] += 1;
        }
        genome[i] = pick;
    }
}

/// Random capacity-respecting plan: candidates visited in random order, each
/// taking a uniformly chosen option among open roles and "unassigned".
fn random_genome<R: Rng>(n: usize, capacities: &[u32], rng: &mut R) -> Genome {
    let mut genome = vec![None; n];
    let mut load = vec![0u32; capacities.len()];
    let mut open: Vec<u32> = (0..capacities.len() as u32).filter(|&j| capacities[j as usize] > 0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for i in order {
        let k = rng.random_range(0..=open.len());
        if k == open.len() {
            continue;
        }
        let j = open[k];
        genome[i] = Some(j);
        load[j as usize] += 1;
        if load[j as usize] >= capacities[j as usize] {
            open.swap_remove(k);
        }
    }
    genome
}

/// Fills roles pair by pair in descending merit order (ties by candidate
/// then role index) while capacity remains.
pub fn greedy_max_merit(problem: &Problem) -> Genome {
    let (n, m) = (problem.candidate_count(), problem.role_count());
    let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    pairs.sort_by(|a, b| problem.merit_at(b.0, b.1).total_cmp(&problem.merit_at(a.0, a.1)).then(a.cmp(b)));
    let mut genome = vec![None; n];
    let mut load = vec![0u32; m];
    let caps = problem.capacities();
    for (i, j) in pairs {
        if genome[i].is_none() && load[j] < caps[j] {
            genome[i] = Some(j as u32);
            load[j] += 1;
        }
    }
    genome
}

/// Greedy fill where each step takes the best open pair by
/// `merit + lambda · N · Δf2`, with `N` the total capacity and `Δf2` the
/// diversity gained from the candidate's groups. `lambda = 0` is a plain
/// merit greedy.
pub fn greedy_tradeoff(problem: &Problem, lambda: f64) -> Genome {
    let (n, m) = (problem.candidate_count(), problem.role_count());
    let caps = problem.capacities();
    let cats = problem.diversity_categories();
    let mut groups: BTreeMap<Vec<u32>, Vec<(usize, usize)>> = BTreeMap::new();
    for i in 0..n {
        let key: Vec<u32> = cats.iter().map(|c| c.2[i]).collect();
        groups.entry(key).or_default().extend((0..m).map(|j| (i, j)));
    }
    let mut queues: Vec<(Vec<u32>, Vec<(usize, usize)>, usize)> = groups
        .into_iter()
        .map(|(k, mut pairs)| {
            pairs.sort_by(|a, b| problem.merit_at(b.0, b.1).total_cmp(&problem.merit_at(a.0, a.1)).then(a.cmp(b)));
            (k, pairs, 0)
        })
        .collect();
    let scale = lambda * caps.iter().map(|&c| c as f64).sum::<f64>();
    let mut counts: Vec<Vec<usize>> = cats.iter().map(|c| vec![0; c.1]).collect();
    let mut genome = vec![None; n];
    let mut load = vec![0u32; m];
    loop {
        let mut best: Option<(f64, usize)> = None;
        for (q, (key, pairs, cursor)) in queues.iter_mut().enumerate() {
            while *cursor < pairs.len() {
                let (i, j) = pairs[*cursor];
                if genome[i].is_none() && load[j] < caps[j] {
                    break;
                }
                *cursor += 1;
            }
            let Some(&(i, j)) = pairs.get(*cursor) else { continue };
            let mut gain = 0.0;
            if scale > 0.0 {
                for (c, (w, _, _)) in cats.iter().enumerate() {
                    let before = entropy_of_counts(&counts[c]);
                    counts[c][key[c] as usize] += 1;
                    gain += w * (entropy_of_counts(&counts[c]) - before);
                    counts[c][key[c] as usize] -= 1;
                }
            }
            let score = problem.merit_at(i, j) + scale * gain;
            if best.is_none_or(|(b, _)| score > b) {
                best = Some((score, q));
            }
        }
        let Some((_, q)) = best else { break };
        let (key, pairs, cursor) = &mut queues[q];
        let (i, j) = pairs[*cursor];
        genome[i] = Some(j as u32);
        load[j] += 1;
        for (c, k) in key.iter().enumerate() {
            counts[c][*k as usize] += 1;
        }
        *cursor += 1;
    }
    genome
}

#[derive(Clone, Debug, PartialEq)]
pub struct Individual {
    pub genome: Genome,
    pub raw: ObjectiveVector,
    pub penalized: ObjectiveVector,
    pub total_violation: f64,
    pub rank: usize,
    pub crowding: f64,
}

impl Individual {
    fn evaluate(problem: &Problem, genome: Genome, penalty: f64) -> Self {
        let eval = problem.evaluate(&genome);
        let p = penalty * eval.total_violation;
        let raw = eval.objectives;
        let penalized = if p > 0.0 {
            ObjectiveVector::new(raw.merit - p, raw.diversity - p, raw.preference - p)
        } else {
            raw
        };
        Self { genome, raw, penalized, total_violation: eval.total_violation, rank: 0, crowding: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontMember {
    pub plan: AllocationPlan,
    pub penalized: ObjectiveVector,
    pub encoding: Genome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub front1_size: usize,
    pub hypervolume: f64,
    pub diversity_weight: f64,
    /// Violating individuals in the population evaluated this generation.
    pub violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    pub members: Vec<FrontMember>,
    pub trace: Vec<GenerationStats>,
    pub escalations: usize,
    pub objective_weights: [f64; 3],
    /// Accumulated `(1 + ρ)^escalations` factor on the diversity weight.
    pub diversity_multiplier: f64,
}

impl ParetoFront {
    pub fn effective_weights(&self, weights: [f64; 3]) -> [f64; 3] {
        [weights[0], weights[1] * self.diversity_multiplier, weights[2]]
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("generation,front1_size,hypervolume,diversity_weight,violations\n");
        for s in &self.trace {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                s.generation, s.front1_size, s.hypervolume, s.diversity_weight, s.violations
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("front serializes");
        text.push('\n');
        text
    }
}

/// Assigns ranks and crowding distances; returns the fronts.
fn rank_population(pop: &mut [Individual]) -> Vec<Vec<usize>> {
    let points: Vec<[f64; 3]> = pop.iter().map(|i| i.penalized.to_array()).collect();
    let fronts = non_dominated_sort(&points);
    for (r, front) in fronts.iter().enumerate() {
        let pts: Vec<[f64; 3]> = front.iter().map(|&i| points[i]).collect();
        for (&i, d) in front.iter().zip(crowding_distance(&pts)) {
            pop[i].rank = r + 1;
            pop[i].crowding = d;
        }
    }
    fronts
}

fn better(a: &Individual, b: &Individual) -> bool {
    a.rank < b.rank || (a.rank == b.rank && a.crowding > b.crowding)
}

fn tournament<'a, R: Rng>(pop: &'a [Individual], rng: &mut R) -> &'a Individual {
    let a = &pop[rng.random_range(0..pop.len())];
    let b = &pop[rng.random_range(0..pop.len())];
    if better(b, a) {
        b
    } else {
        a
    }
}

fn best_weighted(pop: &[Individual], weights: [f64; 3]) -> usize {
    let mut best = 0;
    for i in 1..pop.len() {
        if pop[i].penalized.weighted_sum(weights) > pop[best].penalized.weighted_sum(weights) {
            best = i;
        }
    }
    best
}

/// Members of the new first front that cover every previous first-front
/// point: the point itself if it is still rank 1, else a rank-1 member that
/// dominates it. One per distinct objective vector.
fn front_cover(combined: &[Individual], previous: &[usize]) -> Vec<usize> {
    let first: Vec<usize> = (0..combined.len()).filter(|&i| combined[i].rank == 1).collect();
    let mut seen: Vec<[f64; 3]> = Vec::new();
    let mut cover = Vec::new();
    for &p in previous {
        let point = combined[p].penalized.to_array();
        let rep = if combined[p].rank == 1 {
            p
        } else {
            *first
                .iter()
                .find(|&&i| dominates(&combined[i].penalized.to_array(), &point))
                .expect("a dominated point has a rank-1 dominator")
        };
        let key = combined[rep].penalized.to_array();
        if !seen.contains(&key) {
            seen.push(key);
            cover.push(rep);
        }
    }
    cover
}

/// Elitist truncation of `R = P ∪ Q` to `n` members by (rank, crowding).
/// When the first front overflows, members covering the previous first
/// front go first, so front-1 hypervolume never drops; the best member under
/// `weights` is kept next.
fn survivors(
    mut combined: Vec<Individual>,
    fronts: &[Vec<usize>],
    n: usize,
    weights: [f64; 3],
    previous: &[usize],
) -> Vec<Individual> {
    let best = best_weighted(&combined, weights);
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    for (r, front) in fronts.iter().enumerate() {
        if chosen.len() + front.len() <= n {
            chosen.extend(front);
            continue;
        }
        let mut priority = if r == 0 { front_cover(&combined, previous) } else { Vec::new() };
        if !priority.contains(&best) {
            priority.push(best);
        }
        let mut rest = front.clone();
        rest.sort_by(|&a, &b| {
            let pa = priority.iter().position(|&x| x == a).unwrap_or(usize::MAX);
            let pb = priority.iter().position(|&x| x == b).unwrap_or(usize::MAX);
            pa.cmp(&pb).then(combined[b].crowding.total_cmp(&combined[a].crowding)).then(a.cmp(&b))
        });
        chosen.extend(rest.into_iter().take(n - chosen.len()));
        break;
    }
    chosen.sort_unstable();
    let mut out = Vec::with_capacity(n);
    let mut slots: Vec<Option<Individual>> = combined.drain(..).map(Some).collect();
    for i in chosen {
        out.push(slots[i].take().unwrap());
    }
    out
}

fn front_hypervolume(pop: &[Individual]) -> (usize, f64) {
    let pts: Vec<[f64; 3]> = pop.iter().filter(|i| i.rank == 1).map(|i| i.penalized.to_array()).collect();
    (pts.len(), hypervolume(&pts, [0.0; 3]))
}

/// Runs the adaptive NSGA-II and returns the final first front together
/// with per-generation statistics.
pub fn run_nsga2(problem: &Problem, config: &OptimizerConfig) -> Result<ParetoFront> {
    run_nsga2_observed(problem, config, |_, _| {})
}

/// As [`run_nsga2`], calling `observe(generation, population)` after the
/// initial population and after every survivor selection.
pub fn run_nsga2_observed(
    problem: &Problem,
    config: &OptimizerConfig,
    mut observe: impl FnMut(usize, &[Individual]),
) -> Result<ParetoFront> {
    config.validate()?;
    let n = config.population_size;
    let caps = problem.capacities();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut genomes: Vec<Genome> = Vec::with_capacity(n);
    if config.greedy_seed {
        genomes.push(greedy_max_merit(problem));
    }
    for t in 0..config.tradeoff_seeds.min(n.saturating_sub(genomes.len())) {
        genomes.push(greedy_tradeoff(problem, 0.02 * 2f64.powi(t as i32)));
    }
    while genomes.len() < n {
        genomes.push(random_genome(problem.candidate_count(), caps, &mut rng));
    }
    let mut pop: Vec<Individual> =
        genomes.into_par_iter().map(|g| Individual::evaluate(problem, g, config.penalty)).collect();

    let mut multiplier = 1.0;
    let mut diversity_weight = config.objective_weights[1];
    let mut escalations = 0;
    let mut trace = Vec::new();
    let violators = pop.iter().filter(|i| i.total_violation > 0.0).count();
    if violators > 0 {
        multiplier *= 1.0 + config.rho;
        diversity_weight *= 1.0 + config.rho;
        escalations += 1;
    }
    rank_population(&mut pop);
    observe(0, &pop);
    let (size, mut last_hv) = front_hypervolume(&pop);
    trace.push(GenerationStats {
        generation: 0,
        front1_size: size,
        hypervolume: last_hv,
        diversity_weight,
        violations: violators,
    });

    let mut stagnant = 0;
    for generation in 1..=config.max_generations {
        let mut offspring: Vec<Genome> = Vec::with_capacity(n);
        while offspring.len() < n {
            let a = tournament(&pop, &mut rng);
            let b = tournament(&pop, &mut rng);
            let (mut x, mut y) = if rng.random_bool(config.crossover_rate) {
                crossover(&a.genome, &b.genome, caps, &mut rng)?
            } else {
                (a.genome.clone(), b.genome.clone())
            };
            mutate(&mut x, caps, config.mutation_rate, &mut rng);
            mutate(&mut y, caps, config.mutation_rate, &mut rng);
            offspring.push(x);
            offspring.push(y);
        }
        let children: Vec<Individual> =
            offspring.into_par_iter().map(|g| Individual::evaluate(problem, g, config.penalty)).collect();
        let previous: Vec<usize> = (0..pop.len()).filter(|&i| pop[i].rank == 1).collect();
        let mut combined = pop;
        combined.extend(children);

        let violators = combined.iter().filter(|i| i.total_violation > 0.0).count();
        if violators > 0 {
            multiplier *= 1.0 + config.rho;
            diversity_weight *= 1.0 + config.rho;
            escalations += 1;
        }
        let weights = [config.objective_weights[0], diversity_weight, config.objective_weights[2]];
        let fronts = rank_population(&mut combined);
        pop = survivors(combined, &fronts, n, weights, &previous);
        observe(generation, &pop);

        let (size, hv) = front_hypervolume(&pop);
        trace.push(GenerationStats {
            generation,
            front1_size: size,
            hypervolume: hv,
            diversity_weight: weights[1],
            violations: violators,
        });
        let change = (hv - last_hv).abs() / last_hv.abs().max(1e-12);
        stagnant = if change < config.stagnation_tolerance { stagnant + 1 } else { 0 };
        last_hv = hv;
        if stagnant >= config.stagnation_generations {
            break;
        }
    }

    let mut first: Vec<&Individual> = pop.iter().filter(|i| i.rank == 1).collect();
    first.sort_by(|a, b| a.genome.cmp(&b.genome));
    first.dedup_by(|a, b| a.genome == b.genome);
    let members = first
        .into_iter()
        .map(|i| FrontMember { plan: problem.decode(&i.genome), penalized: i.penalized, encoding: i.genome.clone() })
        .collect();
    Ok(ParetoFront {
        members,
        trace,
        escalations,
        objective_weights: config.objective_weights,
        diversity_multiplier: multiplier,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    pub weights: [f64; 3],
    /// Members breaking any of these are never selected.
    #[serde(default)]
    pub mandatory: Vec<Constraint>,
}

/// Picks the compliant member with the highest weighted penalized objective
/// sum (diversity weight scaled by the front's escalation factor). Ties go
/// to higher diversity, then the smaller encoding.
pub fn select_solution<'f>(front: &'f ParetoFront, policy: &SelectionPolicy, ds: &Dataset) -> Result<&'f FrontMember> {
    if front.members.is_empty() {
        return Err(GesaError::Empty("front".into()));
    }
    let mandatory = ConstraintSet { constraints: policy.mandatory.clone() };
    let weights = front.effective_weights(policy.weights);
    let mut best: Option<(&FrontMember, f64)> = None;
    for m in &front.members {
        if !mandatory.constraints.is_empty() && !evaluate_constraints(&m.plan, ds, &mandatory)?.is_empty() {
            continue;
        }
        let score = m.penalized.weighted_sum(weights);
        let replace = match best {
            None => true,
            Some((b, bs)) => {
                if (score - bs).abs() > 1e-12 {
                    score > bs
                } else {
                    match m.plan.objective_values.diversity.total_cmp(&b.plan.objective_values.diversity) {
                        Ordering::Greater => true,
                        Ordering::Less => false,
                        Ordering::Equal => m.encoding < b.encoding,
                    }
                }
            }
        };
        if replace {
            best = Some((m, score));
        }
    }
    best.map(|(m, _)| m).ok_or(GesaError::NoCompliantSolution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    #[test]
    fn dominance_examples() {
        assert!(dominates(&[2.0, 2.0, 2.0], &[1.0, 1.0, 1.0]));
        assert!(!dominates(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]));
        assert!(!dominates(&[2.0, 0.0, 0.0], &[0.0, 2.0, 0.0]));
        assert!(!dominates(&[0.0, 2.0, 0.0], &[2.0, 0.0, 0.0]));
    }

    #[test]
    fn sort_examples() {
        let pts = [[2.0, 2.0], [1.0, 1.0], [0.0, 3.0]];
        assert_eq!(non_dominated_sort(&pts), vec![vec![0, 2], vec![1]]);
        assert_eq!(non_dominated_sort(&[[1.0, 1.0]; 4]), vec![vec![0, 1, 2, 3]]);
        assert_eq!(non_dominated_sort(&[[5.0]]), vec![vec![0]]);
    }

    #[test]
    fn crowding_examples() {
        assert!(crowding_distance(&[[0.0, 1.0], [1.0, 0.0]]).iter().all(|d| d.is_infinite()));
        let d = crowding_distance(&[[0.0, 2.0], [1.0, 1.0], [2.0, 0.0]]);
        assert!(d[0].is_infinite() && d[2].is_infinite());
        assert_eq!(d[1], 2.0);
        let d = crowding_distance(&[[0.0, 4.0], [2.0, 2.0], [2.0, 2.0], [4.0, 0.0]]);
        // Each duplicate sees its twin on one side: (2 − 0)/4 + (2 − 2)/4 per objective.
        assert_eq!(d[1], 0.5 + 0.5);
        assert_eq!(d[2], 0.5 + 0.5);
        let d = crowding_distance(&[[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]]);
        assert_eq!(d[1], 1.0);
    }

    #[test]
    fn crossover_examples() {
        let caps = [1, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = vec![Some(0), None, Some(1)];
        let (x, y) = crossover(&a, &a, &[2, 2], &mut rng).unwrap();
        assert_eq!((x.clone(), y), (a.clone(), a.clone()));
        assert!(crossover(&a, &a[..2], &caps, &mut rng).is_err());

        // Find a seed whose draws exchange candidate 1 only, so both
        // candidates of child x point at role 0.
        let pa = vec![Some(0), None];
        let pb = vec![None, Some(0)];
        let mut seen = false;
        for seed in 0..64 {
            let mut probe = ChaCha8Rng::seed_from_u64(seed);
            let draws = [probe.random_bool(0.5), probe.random_bool(0.5)];
            if draws == [false, true] {
                let (x, y) = crossover(&pa, &pb, &caps, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                assert_eq!(x, vec![Some(0), None], "smaller id keeps the seat");
                assert_eq!(y, vec![None, None]);
                seen = true;
            }
            if draws == [false, false] {
                let (x, y) = crossover(&pa, &pb, &caps, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                assert_eq!((x, y), (pa.clone(), pb.clone()));
            }
        }
        assert!(seen);
    }

    #[test]
    fn mutation_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut g = vec![Some(0), None, Some(1)];
        let before = g.clone();
        mutate(&mut g, &[1, 1], 0.0, &mut rng);
        assert_eq!(g, before);

        let mut g = vec![Some(0)];
        mutate(&mut g, &[1], 1.0, &mut rng);
        assert_eq!(g, vec![None]);
        let mut g = vec![None];
        mutate(&mut g, &[0], 1.0, &mut rng);
        assert_eq!(g, vec![None]);

        let mut full = vec![Some(0), None];
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let mut other = full.clone();
        mutate(&mut full, &[1, 2, 1], 0.7, &mut r1);
        mutate(&mut other, &[1, 2, 1], 0.7, &mut r2);
        assert_eq!(full, other);
    }

    #[test]
    fn hypervolume_small_cases() {
        assert_eq!(hypervolume(&[[1.0, 2.0, 3.0]], [0.0; 3]), 6.0);
        assert_eq!(hypervolume(&[[1.0, -2.0, 3.0]], [0.0; 3]), 0.0);
        let v = hypervolume(&[[2.0, 1.0, 1.0], [1.0, 2.0, 1.0]], [0.0; 3]);
        assert_eq!(v, 3.0);
    }

    /// Inclusion-exclusion over all subsets of boxes anchored at the origin.
    fn hv_oracle(points: &[[f64; 3]]) -> f64 {
        let n = points.len();
        let mut total = 0.0;
        for mask in 1u32..(1 << n) {
            let mut corner = [f64::INFINITY; 3];
            for (i, p) in points.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    for d in 0..3 {
                        corner[d] = corner[d].min(p[d].max(0.0));
                    }
                }
            }
            let vol: f64 = corner.iter().product();
            total += if mask.count_ones() % 2 == 1 { vol } else { -vol };
        }
        total
    }

    fn brute_fronts(points: &[Vec<f64>]) -> Vec<Vec<usize>> {
        let mut remaining: Vec<usize> = (0..points.len()).collect();
        let mut fronts = Vec::new();
        while !remaining.is_empty() {
            let front: Vec<usize> = remaining
                .iter()
                .copied()
                .filter(|&i| !remaining.iter().any(|&j| dominates(&points[j], &points[i])))
                .collect();
            remaining.retain(|i| !front.contains(i));
            fronts.push(front);
        }
        fronts
    }

    proptest! {
        #[test]
        fn hypervolume_matches_inclusion_exclusion(pts in proptest::collection::vec([0.0..3.0f64, 0.0..3.0f64, -0.5..3.0f64], 1..7)) {
            let got = hypervolume(&pts, [0.0; 3]);
            prop_assert!((got - hv_oracle(&pts)).abs() < 1e-9);
        }

        #[test]
        fn sort_matches_brute_force(pts in proptest::collection::vec(proptest::collection::vec(0u8..5, 3), 1..40)) {
            let pts: Vec<Vec<f64>> = pts.into_iter().map(|p| p.into_iter().map(f64::from).collect()).collect();
            prop_assert_eq!(non_dominated_sort(&pts), brute_fronts(&pts));
        }

        #[test]
        fn operators_respect_capacity(seed in 0u64..500, rate in 0.0..1.0f64) {
            let caps = [1u32, 2, 3, 0];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_genome(12, &caps, &mut rng);
            let b = random_genome(12, &caps, &mut rng);
            let (mut x, mut y) = crossover(&a, &b, &caps, &mut rng).unwrap();
            mutate(&mut x, &caps, rate, &mut rng);
            mutate(&mut y, &caps, rate, &mut rng);
            for g in [&a, &b, &x, &y] {
                let load = role_loads(g, caps.len());
                prop_assert!(load.iter().zip(&caps).all(|(l, c)| l <= c));
            }
        }
    }
}
