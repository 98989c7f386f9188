//! Cost-model guided evolutionary search.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{predict_batch, CostModelParams};
use crate::space::{encode_features, mutate_config, ConfigSpace, Configuration, TaskSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchParams {
    pub population: usize,
    pub generations: usize,
    pub mutation_count: usize,
    pub survivors: usize,
    pub epsilon_random: f64,
    pub seed: u64,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams { population: 128, generations: 4, mutation_count: 4, survivors: 32, epsilon_random: 0.05, seed: 0 }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 || self.mutation_count == 0 || self.survivors == 0 {
            return Err(Error::Config("search counts must be positive".into()));
        }
        if self.survivors > self.population {
            return Err(Error::Config("survivors cannot exceed population".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon_random) {
            return Err(Error::Config("epsilon_random must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub config: Configuration,
    pub score: f64,
}

/// Anything that ranks configurations of a task; higher is better.
pub trait Scorer {
    fn score(&self, task: &TaskSpec, configs: &[Configuration]) -> Result<Vec<f64>>;
}

impl Scorer for CostModelParams {
    fn score(&self, task: &TaskSpec, configs: &[Configuration]) -> Result<Vec<f64>> {
        let feats = configs.iter().map(|c| encode_features(task, c)).collect::<Result<Vec<_>>>()?;
        predict_batch(self, &feats)
    }
}

/// Wraps a per-configuration function as a [`Scorer`].
pub struct FnScorer<F>(pub F);

impl<F: Fn(&TaskSpec, &Configuration) -> f64> Scorer for FnScorer<F> {
    fn score(&self, task: &TaskSpec, configs: &[Configuration]) -> Result<Vec<f64>> {
        Ok(configs.iter().map(|c| (self.0)(task, c)).collect())
    }
}

fn rank(cands: &mut [ScoredCandidate]) {
    cands.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.config.cmp(&b.config)));
}

struct ScoreCache<'a, S: ?Sized> {
    scorer: &'a S,
    task: &'a TaskSpec,
    known: HashMap<Configuration, f64>,
}

impl<S: Scorer + ?Sized> ScoreCache<'_, S> {
    fn score_all(&mut self, configs: Vec<Configuration>) -> Result<Vec<ScoredCandidate>> {
        let mut fresh: Vec<Configuration> = Vec::new();
        let mut queued = HashSet::new();
        for c in &configs {
            if !self.known.contains_key(c) && queued.insert(c.clone()) {
                fresh.push(c.clone());
            }
        }
        if !fresh.is_empty() {
            let s = self.scorer.score(self.task, &fresh)?;
            self.known.extend(fresh.into_iter().zip(s));
        }
        Ok(configs.into_iter().map(|c| ScoredCandidate { score: self.known[&c], config: c }).collect())
    }
}

/// Elitist single-knob mutation search. Returns the final population, unique
/// by configuration, best first; ties fall back to lexicographic order.
pub fn evolve<S: Scorer + ?Sized>(scorer: &S, space: &ConfigSpace, params: &SearchParams) -> Result<Vec<ScoredCandidate>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut cache = ScoreCache { scorer, task: &space.task, known: HashMap::new() };
    let initial: Vec<Configuration> = (0..params.population).map(|_| space.sample(&mut rng)).collect();
    let mut pop = cache.score_all(initial)?;
    for _ in 0..params.generations {
        let survivors = top_unique(pop, params.survivors);
        let mut offspring = Vec::with_capacity(survivors.len() * params.mutation_count);
        for parent in &survivors {
            for _ in 0..params.mutation_count {
                let child = if rng.gen::<f64>() < params.epsilon_random {
                    space.sample(&mut rng)
                } else {
                    match mutate_config(space, &parent.config, &mut rng) {
                        Ok(c) => c,
                        Err(Error::ImmutableSpace) => parent.config.clone(),
                        Err(e) => return Err(e),
                    }
                };
                offspring.push(child);
            }
        }
        pop = survivors;
        pop.extend(cache.score_all(offspring)?);
    }
    Ok(top_unique(pop, usize::MAX))
}

fn top_unique(mut pop: Vec<ScoredCandidate>, limit: usize) -> Vec<ScoredCandidate> {
    rank(&mut pop);
    let mut seen = HashSet::new();
    pop.into_iter().filter(|c| seen.insert(c.config.clone())).take(limit).collect()
}

/// Best-scored candidates not yet measured, in score order.
pub fn select_batch(candidates: &[ScoredCandidate], already_measured: &HashSet<u64>, batch_size: usize) -> Vec<ScoredCandidate> {
    let mut taken = HashSet::new();
    candidates
        .iter()
        .filter(|c| {
            let h = c.config.canonical_hash();
            !already_measured.contains(&h) && taken.insert(h)
        })
        .take(batch_size)
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::shared_factor;
    use crate::space::{build_space, enumerate_configs, ENUMERATION_CAP};

    fn space() -> ConfigSpace {
        build_space(&TaskSpec::new("t", 10.0, 2.0, 9.0, 6.0)).unwrap()
    }

    fn cand(v: i64, score: f64) -> ScoredCandidate {
        ScoredCandidate { config: Configuration::new(vec![v]), score }
    }

    #[test]
    fn zero_generations_returns_sorted_random_population() {
        let sp = space();
        let params = SearchParams { generations: 0, seed: 3, ..Default::default() };
        let out = evolve(&FnScorer(shared_factor), &sp, &params).unwrap();
        assert!(!out.is_empty() && out.len() <= 128);
        assert!(out.windows(2).all(|w| w[0].score >= w[1].score));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let first = sp.sample(&mut rng);
        assert!(out.iter().any(|c| c.config == first));
    }

    #[test]
    fn search_is_deterministic() {
        let sp = space();
        let params = SearchParams { seed: 17, ..Default::default() };
        let a = evolve(&FnScorer(shared_factor), &sp, &params).unwrap();
        let b = evolve(&FnScorer(shared_factor), &sp, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn guided_search_reaches_top_percentile() {
        let sp = space();
        let mut all: Vec<f64> = enumerate_configs(&sp, ENUMERATION_CAP).unwrap().iter().map(|c| shared_factor(&sp.task, c)).collect();
        all.sort_by(f64::total_cmp);
        let p99 = all[(all.len() as f64 * 0.99) as usize];
        for seed in 0..5 {
            let params = SearchParams { seed, generations: 8, ..Default::default() };
            let best = &evolve(&FnScorer(|t: &TaskSpec, c: &Configuration| shared_factor(t, c).ln()), &sp, &params).unwrap()[0];
            assert!(shared_factor(&sp.task, &best.config) >= p99);
        }
    }

    #[test]
    fn batch_selection_skips_measured() {
        let cands = vec![cand(1, 3.0), cand(2, 2.0), cand(3, 1.0)];
        let none = HashSet::new();
        let b = select_batch(&cands, &none, 2);
        assert_eq!(b, cands[..2].to_vec());
        let all: HashSet<u64> = cands.iter().map(|c| c.config.canonical_hash()).collect();
        assert!(select_batch(&cands, &all, 2).is_empty());
        let top: HashSet<u64> = [cands[0].config.canonical_hash()].into();
        assert_eq!(select_batch(&cands, &top, 5), cands[1..].to_vec());
        let dup = vec![cand(1, 3.0), cand(1, 3.0), cand(2, 1.0)];
        assert_eq!(select_batch(&dup, &none, 3).len(), 2);
    }
}
