use std::path::Path;

use rand::seq::IndexedRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::report::{ExploreRow, RelevanceRow, RunReport, StepRow, VarianceRow};
use crate::buffers::{
    advance_and_insert, form_meta_batch, split_and_count, Buffer, BufferEntry, CoreBuffer,
    MetaBatch, ReservoirBuffer,
};
use crate::clustering::assign_clusters;
use crate::environment::{generate_world, load_dataset, Confusion, QueryLog, World};
use crate::error::{Error, Result};
use crate::model::{
    encode_concepts, orthogonalize_concepts, predict, relevance_forward, ConceptField,
    FeaturizerConfig, ModelConfig, PolicyParams, RelevanceMode, Sample, POOLED_DIM,
};
use crate::numerics::{OptimizerState, Tensor};
use crate::policy::{
    choose, meta_update, online_update, Candidate, MetaBatchRule, Mode, Phase, QueryHistory,
    ScoreContext,
};
use crate::rng::{self, StreamRng, StreamState};

/// The training and inference pools: first and second half of the world.
pub fn build_pools(config: &RunConfig) -> Result<(World, World)> {
    let world = match &config.dataset {
        Some(path) => load_dataset(path)?,
        None => {
            let mut wc = config.world.clone();
            wc.seed = rng::derive_seed(config.seed, "world");
            generate_world(&wc)?
        }
    };
    world.split_at(world.len() / 2)
}

fn phase_name(phase: Phase) -> &'static str {
    match phase {
        Phase::Training => "train",
        Phase::Inference => "infer",
    }
}

#[derive(Clone, Debug)]
struct Streams {
    reparam: (u64, StreamRng),
    reservoir: (u64, StreamRng),
    policy: (u64, StreamRng),
}

impl Streams {
    fn new(seed: u64, phase: Phase) -> Self {
        let make = |name: &str| {
            let s = rng::derive_seed(seed, &format!("{}/{name}", phase_name(phase)));
            (s, rng::restore(StreamState { seed: s, word_pos: 0 }))
        };
        Streams {
            reparam: make("reparam"),
            reservoir: make("reservoir"),
            policy: make("policy"),
        }
    }

    fn save(&self) -> [StreamState; 3] {
        [&self.reparam, &self.reservoir, &self.policy].map(|(s, r)| rng::save(*s, r))
    }

    fn restore(states: [StreamState; 3]) -> Self {
        let [a, b, c] = states.map(|s| (s.seed, rng::restore(s)));
        Streams {
            reparam: a,
            reservoir: b,
            policy: c,
        }
    }
}

fn lookup<'a>(world: &World, fields: &'a [ConceptField], region_id: usize) -> Result<&'a ConceptField> {
    world
        .regions()
        .binary_search_by_key(&region_id, |r| r.region_id)
        .map(|i| &fields[i])
        .map_err(|_| Error::UnknownRegion(region_id))
}

fn samples<'a>(world: &World, fields: &'a [ConceptField], batch: &'a [(usize, Vec<u8>)]) -> Result<Vec<Sample<'a>>> {
    batch
        .iter()
        .map(|(id, labels)| {
            Ok(Sample {
                field: lookup(world, fields, *id)?,
                labels,
            })
        })
        .collect()
}

/// Serializable snapshot of a session, enough to resume it exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub phase: Phase,
    pub step: usize,
    pub theta: PolicyParams,
    pub optimizer: OptimizerState,
    pub core: CoreBuffer,
    pub reservoir: ReservoirBuffer,
    pub history: QueryHistory,
    pub log: QueryLog,
    pub report: RunReport,
    pub streams: [StreamState; 3],
}

pub fn save_checkpoint(state: &SessionState, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string(state)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<SessionState> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Mean over dimensions of the (n - 1) sample variance; `None` below two rows.
fn mean_sample_variance(mus: &[&[f64]]) -> Option<f64> {
    if mus.len() < 2 {
        return None;
    }
    let n = mus.len() as f64;
    let k = mus[0].len();
    let total: f64 = (0..k)
        .map(|d| {
            let mean = mus.iter().map(|m| m[d]).sum::<f64>() / n;
            mus.iter().map(|m| (m[d] - mean).powi(2)).sum::<f64>() / (n - 1.0)
        })
        .sum();
    Some(total / k.max(1) as f64)
}

/// One phase of a run, advanced a query at a time.
pub struct Session {
    config: RunConfig,
    phase: Phase,
    mode: Mode,
    budget: usize,
    world: World,
    fields: Vec<ConceptField>,
    model: ModelConfig,
    theta: PolicyParams,
    opt: OptimizerState,
    core: CoreBuffer,
    reservoir: ReservoirBuffer,
    history: QueryHistory,
    log: QueryLog,
    confusion: Confusion,
    sr_sum: f64,
    report: RunReport,
    streams: Streams,
    step: usize,
}

impl Session {
    /// Starts a phase; `theta == None` draws fresh parameters from the run seed.
    pub fn new(config: &RunConfig, phase: Phase, theta: Option<PolicyParams>) -> Result<Self> {
        config.validate()?;
        let (train, test) = build_pools(config)?;
        let mut world = match phase {
            Phase::Training => train,
            Phase::Inference => test,
        };
        let budget = config.schedule.budget(phase);
        world.set_budget(budget)?;
        let k = world
            .regions()
            .first()
            .map(|r| r.concept_count())
            .ok_or(Error::Empty("region pool"))?;
        let theta = match theta {
            Some(t) => t,
            None => PolicyParams::init(
                k,
                POOLED_DIM,
                config.model.encoder_hidden,
                config.model.decoder_hidden,
                FeaturizerConfig { seed: config.seed },
                &mut rng::stream(config.seed, "init"),
            )?,
        };
        if theta.concept_count() != k {
            return Err(Error::Shape(format!(
                "parameters expect {} concepts but the world has {k}",
                theta.concept_count()
            )));
        }
        let orth = config.model.orthogonalize;
        let psi = theta.psi;
        let fields = world
            .regions()
            .par_iter()
            .map(|r| encode_concepts(r, &psi).map(|f| orthogonalize_concepts(f, orth)))
            .collect::<Result<Vec<_>>>()?;
        let mode = config.schedule.mode;
        let b = config.buffers;
        Ok(Session {
            config: config.clone(),
            phase,
            mode,
            budget,
            world,
            fields,
            model: config.model.model_config(mode.relevance()),
            theta,
            opt: config.model.optimizer(),
            core: Buffer::new(b.core_capacity, b.core_lifespan),
            reservoir: Buffer::new(b.reservoir_capacity, b.reservoir_lifespan),
            history: QueryHistory::new(),
            log: QueryLog::new(),
            confusion: Confusion::default(),
            sr_sum: 0.0,
            report: RunReport::new(mode, phase, config.seed, budget),
            streams: Streams::new(config.seed, phase),
            step: 0,
        })
    }

    /// Rebuilds a session from a snapshot taken under the same config.
    pub fn restore(config: &RunConfig, state: SessionState) -> Result<Self> {
        let mut s = Session::new(config, state.phase, Some(state.theta))?;
        for &id in &state.history.region_ids {
            s.world.query(id)?;
        }
        for r in state.log.records() {
            s.confusion.add(&r.probs, &r.labels);
            s.sr_sum += r.sr_contrib;
        }
        s.opt = state.optimizer;
        s.core = state.core;
        s.reservoir = state.reservoir;
        s.history = state.history;
        s.log = state.log;
        s.report = state.report;
        s.streams = Streams::restore(state.streams);
        s.step = state.step;
        Ok(s)
    }

    pub fn snapshot(&self) -> SessionState {
        SessionState {
            phase: self.phase,
            step: self.step,
            theta: self.theta.clone(),
            optimizer: self.opt.clone(),
            core: self.core.clone(),
            reservoir: self.reservoir.clone(),
            history: self.history.clone(),
            log: self.log.clone(),
            report: self.report.clone(),
            streams: self.streams.save(),
        }
    }

    pub fn theta(&self) -> &PolicyParams {
        &self.theta
    }

    pub fn report(&self) -> &RunReport {
        &self.report
    }

    pub fn log(&self) -> &QueryLog {
        &self.log
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.budget || self.world.unqueried().is_empty()
    }

    pub fn finish(self) -> (PolicyParams, RunReport) {
        (self.theta, self.report)
    }

    /// Runs until the budget or the pool is exhausted.
    pub fn run(&mut self) -> Result<()> {
        while self.step()?.is_some() {}
        Ok(())
    }

    /// Executes one query step; `None` once the phase is over.
    pub fn step(&mut self) -> Result<Option<StepRow>> {
        if self.is_finished() {
            return Ok(None);
        }
        let t = self.step;
        self.advance(t).map(Some).map_err(|e| e.at_step(t))
    }

    fn field(&self, region_id: usize) -> Result<&ConceptField> {
        lookup(&self.world, &self.fields, region_id)
    }

    fn candidates(&self) -> Result<Vec<Candidate>> {
        let relevance = self.mode.relevance();
        self.world
            .regions()
            .par_iter()
            .zip(self.fields.par_iter())
            .filter(|(r, _)| !self.world.is_queried(r.region_id))
            .map(|(r, f)| {
                let p = predict(f, &self.theta, relevance)?;
                Ok(Candidate {
                    region_id: r.region_id,
                    mu: p.mu,
                    sigma: p.sigma,
                    probs: p.probs,
                })
            })
            .collect()
    }

    fn refresh_buffer_mus(&mut self) -> Result<()> {
        let k = self.theta.concept_count();
        let mut fresh = Vec::with_capacity(self.core.len() + self.reservoir.len());
        for e in self.core.entries.iter().chain(&self.reservoir.entries) {
            fresh.push(match self.mode.relevance() {
                RelevanceMode::Learned => relevance_forward(self.field(e.region_id)?, &self.theta.zeta, None)?.mu,
                RelevanceMode::FixedOnes => vec![1.0; k],
            });
        }
        for (e, mu) in self
            .core
            .entries
            .iter_mut()
            .chain(self.reservoir.entries.iter_mut())
            .zip(fresh)
        {
            e.relevance_mu = mu;
        }
        Ok(())
    }

    fn meta_batch(&mut self) -> Result<Option<MetaBatch>> {
        if self.core.is_empty() {
            return Ok(None);
        }
        let c = self.config.clustering;
        let rng = &mut self.streams.reservoir.1;
        let batch = match self.mode.meta_batch() {
            MetaBatchRule::None => return Ok(None),
            MetaBatchRule::Clustered => {
                let mus: Vec<Vec<f64>> = self.core.entries.iter().map(|e| e.relevance_mu.clone()).collect();
                let clusters = assign_clusters(&Tensor::from_rows(&mus)?, c.epsilon, c.k_rounds, c.pca_dim)?;
                form_meta_batch(&mut self.core, &mut self.reservoir, &clusters, c.k_res, rng)?
            }
            MetaBatchRule::WholeBuffer => {
                let ids = self
                    .core
                    .entries
                    .iter()
                    .chain(&self.reservoir.entries)
                    .map(|e| e.region_id)
                    .collect();
                split_and_count(&mut self.core, &mut self.reservoir, ids, rng)?
            }
            MetaBatchRule::RandomCore => {
                let n = (c.k_rounds + c.k_res).min(self.core.len());
                let ids = self
                    .core
                    .entries
                    .choose_multiple(rng, n)
                    .map(|e| e.region_id)
                    .collect();
                split_and_count(&mut self.core, &mut self.reservoir, ids, rng)?
            }
        };
        Ok(Some(batch))
    }

    fn entry(&self, region_id: usize) -> Result<&BufferEntry> {
        self.core
            .get(region_id)
            .or_else(|| self.reservoir.get(region_id))
            .ok_or(Error::UnknownRegion(region_id))
    }

    fn batch_variance(&self, batch: &MetaBatch) -> Result<Option<f64>> {
        // relevance as recorded when each member was selected
        let mus: Vec<&[f64]> = batch
            .all()
            .map(|&id| {
                self.history
                    .region_ids
                    .iter()
                    .position(|&r| r == id)
                    .map(|i| self.history.mus[i].as_slice())
                    .ok_or(Error::UnknownRegion(id))
            })
            .collect::<Result<_>>()?;
        Ok(mean_sample_variance(&mus))
    }

    fn advance(&mut self, t: usize) -> Result<StepRow> {
        let candidates = self.candidates()?;
        let ctx = ScoreContext {
            mode: self.mode,
            phase: self.phase,
            history: &self.history,
            step: t,
            budget: self.budget,
            alpha: self.config.schedule.alpha,
            normalize: self.config.schedule.normalize_similarity,
        };
        let (chosen, scores) = choose(&candidates, &ctx, &mut self.streams.policy.1)?;
        let pos = candidates
            .iter()
            .position(|c| c.region_id == chosen)
            .expect("chosen id comes from the pool");
        let score = scores[pos].clone();
        let cand = &candidates[pos];

        let (labels, cost) = self.world.query(chosen)?;
        self.history.record(t, chosen, cand.mu.clone(), self.budget)?;
        let record = self
            .log
            .push(t, chosen, cand.probs.clone(), labels.clone(), cost, self.budget)?;
        let sr_contrib = record.sr_contrib;
        self.confusion.add(&cand.probs, &labels);
        self.sr_sum += sr_contrib;
        self.report.relevance.push(RelevanceRow {
            t,
            region_id: chosen,
            mu: cand.mu.clone(),
        });
        self.report.explore.push(ExploreRow {
            t,
            kappa: score.kappa,
            explore_dominant: score.explore_dominant(),
        });
        advance_and_insert(
            &mut self.core,
            &mut self.reservoir,
            BufferEntry::new(chosen, labels.clone(), cand.mu.clone(), t),
            t,
        )?;

        let mut loss_inner = None;
        let mut loss_outer = None;
        let mut variance = VarianceRow {
            t,
            batch_size: 0,
            variance: None,
        };
        if self.mode.meta_updates(self.phase) {
            self.refresh_buffer_mus()?;
            if let Some(batch) = self.meta_batch()? {
                variance.batch_size = batch.len();
                variance.variance = self.batch_variance(&batch)?;
                let train_labels: Vec<(usize, Vec<u8>)> = batch
                    .train
                    .iter()
                    .map(|&id| Ok((id, self.entry(id)?.labels.clone())))
                    .collect::<Result<_>>()?;
                let test_labels: Vec<(usize, Vec<u8>)> = batch
                    .test
                    .iter()
                    .map(|&id| Ok((id, self.entry(id)?.labels.clone())))
                    .collect::<Result<_>>()?;
                let train = samples(&self.world, &self.fields, &train_labels)?;
                let test = samples(&self.world, &self.fields, &test_labels)?;
                let losses = meta_update(
                    &mut self.theta,
                    &mut self.opt,
                    &train,
                    &test,
                    self.config.model.eta,
                    &self.model,
                    &mut self.streams.reparam.1,
                )?;
                loss_inner = Some(losses.inner);
                loss_outer = losses.outer;
            }
        }
        self.report.variance.push(variance);
        if self.mode.online_updates(self.phase) {
            let field = lookup(&self.world, &self.fields, chosen)?;
            let loss = online_update(
                &mut self.theta,
                &mut self.opt,
                Sample { field, labels: &labels },
                &self.model,
                &mut self.streams.reparam.1,
            )?;
            loss_inner.get_or_insert(loss);
        }

        let metrics = self.confusion.metrics()?;
        let steps = t + 1;
        let cum_sr_pct = 100.0 * self.sr_sum / steps as f64;
        self.report
            .metrics
            .update(steps, (self.sr_sum, cum_sr_pct), metrics);
        let row = StepRow {
            t,
            region_id: chosen,
            w_x: score.w_x,
            kappa: score.kappa,
            explore: score.explore,
            exploit: score.exploit,
            combined: score.combined,
            training_score: score.explore,
            sr_contrib,
            cum_sr_pct,
            acc: metrics.accuracy,
            prec: metrics.precision,
            rec: metrics.recall,
            f1: metrics.f1,
            loss_inner,
            loss_outer,
            buffer_core_size: self.core.len(),
            buffer_res_size: self.reservoir.len(),
        };
        self.report.rows.push(row.clone());
        self.step += 1;
        Ok(row)
    }
}
