//! Training schedule: supervised pretraining of the word encoder, then of
//! the clause encoder, then policy-gradient training of both selection
//! policies with every encoder parameter frozen.

pub mod checkpoint;
pub mod loss;
pub mod optim;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::Config;
use crate::data::Corpus;
use crate::embeddings::{load_embeddings, EmbeddingTable};
use crate::error::{Error, Result};
use crate::lstm::LstmState;
use crate::model::{Example, Model, Policies};
use crate::numeric::{ops, Gradients, ParamId, Tape, Var};
use crate::policy::low::policy_gradient_low;
use crate::policy::high::policy_gradient_high;
use crate::policy::{sgd_step, Decision};
use crate::predictor::Head;
use crate::rollout::{rollout, Context, Decode, Episode, PredictorRewards, Rewards, Rollout};

use loss::{Encoders, Selection};
use optim::{add_l2, Adam};

/// Stage flags and counters; everything here is saved in checkpoints.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Progress {
    pub word_pretrained: bool,
    pub clause_pretrained: bool,
    pub word_epochs: u64,
    pub clause_epochs: u64,
    pub policy_epochs: u64,
    pub fine_tune_epochs: u64,
    /// Adam steps over all supervised stages.
    pub optimizer_steps: u64,
    /// SGD updates of the clause policy (one per query).
    pub high_updates: u64,
    /// SGD updates of the word policy (one per selected clause).
    pub low_updates: u64,
}

/// Mean rewards of the sampled training trajectories in one policy epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRewards {
    pub epoch: u64,
    /// Mean first-clause return over queries.
    pub high: f64,
    /// Mean per-step word reward over selected clauses.
    pub low: f64,
    pub selected_clause_rate: f64,
    pub selected_word_rate: f64,
}

/// Losses and reward curves from [`Trainer::fit`].
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainingLog {
    pub word_losses: Vec<f64>,
    pub clause_losses: Vec<f64>,
    pub rewards: Vec<EpochRewards>,
}

pub struct Trainer {
    pub config: Config,
    pub model: Model,
    pub policies: Policies,
    pub progress: Progress,
    rng: ChaCha8Rng,
}

fn check_nonempty(examples: &[Example]) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::domain("empty corpus"));
    }
    Ok(())
}

fn numeric_guard(ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite values in {what}")))
    }
}

/// Inverted dropout on a traced input.
fn sum_losses(tape: &mut Tape<'_>, losses: &[Var]) -> Result<Option<Var>> {
    let mut iter = losses.iter();
    let Some(&first) = iter.next() else { return Ok(None) };
    let mut total = first;
    for &l in iter {
        total = tape.add(total, l)?;
    }
    Ok(Some(total))
}

/// Mean first-clause return over `m` sampled rollouts under the current policies.
pub fn estimate_high_baseline<R: Rng + ?Sized>(
    ctx: Context<'_>,
    policies: &Policies,
    m: usize,
    rng: &mut R,
    rewards: &dyn Rewards,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::domain("baseline needs at least one sample"));
    }
    let mut sum = 0.0;
    for _ in 0..m {
        sum += rollout(ctx, policies, &mut Decode::Sample(&mut *rng), rewards)?.total_reward();
    }
    Ok(sum / m as f64)
}

/// Mean per-step word reward over `m` sampled passes of one clause from
/// the same entry state.
pub fn estimate_low_baseline<R: Rng + ?Sized>(
    ctx: Context<'_>,
    clause: usize,
    entry: &LstmState,
    policies: &Policies,
    m: usize,
    rng: &mut R,
    rewards: &dyn Rewards,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::domain("baseline needs at least one sample"));
    }
    let mut sum = 0.0;
    for _ in 0..m {
        let (traj, _) = ctx.run_words(clause, entry, &policies.low, &mut Decision::Sample(&mut *rng), rewards)?;
        sum += traj.reward.unwrap_or(0.0);
    }
    Ok(sum / m as f64)
}

#[derive(Default)]
struct EpochTally {
    queries: usize,
    high: f64,
    low: f64,
    selected_clauses: usize,
    clauses: usize,
    selected_words: usize,
    words: usize,
}

impl EpochTally {
    fn add(&mut self, ep: &Episode) {
        self.queries += 1;
        self.high += ep.total_reward();
        self.clauses += ep.traj.n_clauses;
        for l in ep.traj.low.iter().flatten() {
            self.selected_clauses += 1;
            self.low += l.reward.unwrap_or(0.0);
            self.words += l.len();
            self.selected_words += l.selected();
        }
    }

    fn finish(&self, epoch: u64) -> EpochRewards {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        EpochRewards {
            epoch,
            high: self.high / self.queries.max(1) as f64,
            low: self.low / self.selected_clauses.max(1) as f64,
            selected_clause_rate: ratio(self.selected_clauses, self.clauses),
            selected_word_rate: ratio(self.selected_words, self.words),
        }
    }
}

/// One sampled rollout with an immediate word-policy update after every
/// selected clause and a clause-policy update at the end.
fn update_on_query(
    ctx: Context<'_>,
    policies: &mut Policies,
    rng: &mut ChaCha8Rng,
    progress: &mut Progress,
    rewards: &dyn Rewards,
) -> Result<Episode> {
    let cfg = ctx.config;
    let mut roll = Rollout::new(ctx);
    while !roll.is_done() {
        let entry = roll.word_entry_state();
        let i = roll.steps_taken();
        if roll.step(policies, &mut Decode::Sample(&mut *rng), rewards)? {
            let b = estimate_low_baseline(ctx, i, &entry, policies, cfg.baseline_samples, rng, rewards)?;
            let traj = roll.last_words().expect("selected clause has words");
            let mut g = policy_gradient_low(traj, b, &policies.low)?;
            g.clip(cfg.grad_clip);
            sgd_step(&mut policies.low, &g, cfg.sgd_lr)?;
            numeric_guard(policies.low.is_finite(), "word policy")?;
            progress.low_updates += 1;
        }
    }
    let ep = roll.finish(rewards)?;
    let b = estimate_high_baseline(ctx, policies, cfg.baseline_samples, rng, rewards)?;
    let mut g = policy_gradient_high(&ep.traj, &ep.rewards, b, &policies.high)?;
    g.clip(cfg.grad_clip);
    sgd_step(&mut policies.high, &g, cfg.sgd_lr)?;
    numeric_guard(policies.high.is_finite(), "clause policy")?;
    progress.high_updates += 1;
    Ok(ep)
}

impl Trainer {
    /// Fresh model over the corpus vocabulary. Embedding rows come from
    /// `embeddings` when given, otherwise from the seeded generator.
    pub fn new(config: Config, corpus: &Corpus, embeddings: Option<&Path>) -> Result<Self> {
        config.validate()?;
        if config.classes != corpus.classes {
            return Err(Error::shape(
                "trainer",
                format!("config classes {}", config.classes),
                format!("corpus classes {}", corpus.classes),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let vocab = corpus.build_vocab();
        let table = match embeddings {
            Some(p) => load_embeddings(p, &vocab, config.dim, &mut rng)?,
            None => EmbeddingTable::random(&vocab, config.dim, &mut rng),
        };
        let model = Model::new(vocab, &corpus.aspects, table.matrix, config.classes, &mut rng)?;
        let policies = Policies::zeros(config.dim);
        Ok(Trainer {
            config,
            model,
            policies,
            progress: Progress::default(),
            rng,
        })
    }

    pub fn from_parts(config: Config, model: Model, policies: Policies, progress: Progress, rng: ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        if model.dim() != config.dim || model.classes() != config.classes {
            return Err(Error::shape(
                "trainer",
                format!("config dim {} classes {}", config.dim, config.classes),
                format!("model dim {} classes {}", model.dim(), model.classes()),
            ));
        }
        if policies.high.dim() != 4 * config.dim || policies.low.dim() != 3 * config.dim {
            return Err(Error::shape(
                "trainer",
                format!("dim {}", config.dim),
                format!("policy widths {} and {}", policies.high.dim(), policies.low.dim()),
            ));
        }
        Ok(Trainer {
            config,
            model,
            policies,
            progress,
            rng,
        })
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn adam(&self) -> Adam {
        let c = &self.config;
        Adam::new(c.adam_lr, c.adam_beta1, c.adam_beta2, c.adam_eps)
    }

    fn shuffled(&mut self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        order
    }

    /// Shared minibatch loop for the supervised stages. `forward` records
    /// one document's summed query losses on the tape.
    fn supervised_epochs<F>(
        &mut self,
        examples: &[Example],
        epochs: usize,
        params: &[ParamId],
        mut forward: F,
    ) -> Result<Vec<f64>>
    where
        F: FnMut(&mut Tape<'_>, usize, &mut ChaCha8Rng) -> Result<Vec<Var>>,
    {
        let mut adam = self.adam();
        // LSTM and decoder weights carry the L2 term; embedding rows do not.
        let l2_params: Vec<ParamId> = params
            .iter()
            .copied()
            .filter(|&id| id != self.model.embeddings.table)
            .collect();
        let mut losses = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let order = self.shuffled(examples.len());
            let mut epoch_loss = 0.0;
            let mut epoch_queries = 0usize;
            for batch in order.chunks(self.config.batch_size) {
                let mut grads = Gradients::new();
                let mut queries = 0usize;
                for &di in batch {
                    let mut tape = Tape::new(&self.model.store);
                    let doc_losses = forward(&mut tape, di, &mut self.rng)?;
                    if let Some(total) = sum_losses(&mut tape, &doc_losses)? {
                        epoch_loss += tape.value(total)[0];
                        queries += doc_losses.len();
                        tape.backward_into(total, &mut grads)?;
                    }
                }
                if queries == 0 {
                    continue;
                }
                grads.scale(1.0 / queries as f64);
                add_l2(&mut grads, &self.model.store, &l2_params, self.config.l2);
                adam.step(&mut self.model.store, &grads, params)?;
                self.progress.optimizer_steps += 1;
                epoch_queries += queries;
            }
            numeric_guard(self.model.is_finite(), "encoder parameters")?;
            let mean = epoch_loss / epoch_queries.max(1) as f64;
            numeric_guard(mean.is_finite(), "training loss")?;
            losses.push(mean);
        }
        Ok(losses)
    }

    /// Word encoder over every word of the document with the clause head on
    /// its final state. Returns the mean loss per epoch.
    pub fn pretrain_low(&mut self, examples: &[Example], epochs: usize) -> Result<Vec<f64>> {
        check_nonempty(examples)?;
        let params = self.model.word_stage_params();
        let enc = Encoders::of(&self.model);
        let rate = self.config.dropout;
        let losses = self.supervised_epochs(examples, epochs, &params, |tape, di, rng| {
            enc.word_stage(tape, &examples[di], rate, rng)
        })?;
        self.progress.word_pretrained = true;
        self.progress.word_epochs += epochs as u64;
        if self.config.trainable_aspect_embeddings {
            self.model.refresh_aspects()?;
        }
        Ok(losses)
    }

    /// Clause encoder over all clause vectors, document head on the clause
    /// state joined with the frozen word encoder's state over the whole
    /// document.
    pub fn pretrain_high(&mut self, examples: &[Example], epochs: usize) -> Result<Vec<f64>> {
        if !self.progress.word_pretrained {
            return Err(Error::State("clause encoder pretraining needs the word encoder pretrained first".into()));
        }
        check_nonempty(examples)?;
        let cached = examples
            .iter()
            .map(|ex| Ok((self.model.clause_vectors(ex)?, self.model.encode_all_words(ex)?.hidden)))
            .collect::<Result<Vec<_>>>()?;
        let params = self.model.clause_stage_params();
        let enc = Encoders::of(&self.model);
        let rate = self.config.dropout;
        let losses = self.supervised_epochs(examples, epochs, &params, |tape, di, rng| {
            let (vectors, words) = &cached[di];
            enc.clause_stage(tape, &examples[di], vectors, words, rate, rng)
        })?;
        self.progress.clause_pretrained = true;
        self.progress.clause_epochs += epochs as u64;
        Ok(losses)
    }

    /// Accuracy of the select-everything predictions of one head.
    pub fn select_all_accuracy(&self, examples: &[Example], head: Head) -> Result<f64> {
        check_nonempty(examples)?;
        let m = &self.model;
        let mut right = 0usize;
        let mut total = 0usize;
        for ex in examples {
            let words = m.encode_all_words(ex)?;
            let probs = match head {
                Head::Clause => m.predictor.distribution(&m.store, &words.hidden, Head::Clause)?,
                Head::Document => {
                    let vectors = m.clause_vectors(ex)?;
                    let h = m.clause_encoder.encode(&m.store, &vectors, &LstmState::zeros(m.dim()))?;
                    m.predictor
                        .distribution(&m.store, &[h.hidden, words.hidden].concat(), Head::Document)?
                }
            };
            let guess = ops::argmax(&probs) + 1;
            for q in &ex.queries {
                total += 1;
                right += usize::from(q.rating == guess);
            }
        }
        Ok(right as f64 / total.max(1) as f64)
    }

    fn require_pretrained(&self) -> Result<()> {
        match (self.progress.word_pretrained, self.progress.clause_pretrained) {
            (true, true) => Ok(()),
            (false, _) => Err(Error::State("policy training needs the word encoder pretrained first".into())),
            (true, false) => Err(Error::State("policy training needs the clause encoder pretrained first".into())),
        }
    }

    pub fn train_policies(&mut self, examples: &[Example], epochs: usize) -> Result<Vec<EpochRewards>> {
        self.train_policies_with(examples, epochs, &PredictorRewards)
    }

    /// Policy-gradient epochs with encoder parameters frozen. Each query
    /// is one sampled rollout: the word policy is updated after every
    /// selected clause, the clause policy once at the end.
    pub fn train_policies_with(
        &mut self,
        examples: &[Example],
        epochs: usize,
        rewards: &dyn Rewards,
    ) -> Result<Vec<EpochRewards>> {
        self.require_pretrained()?;
        check_nonempty(examples)?;
        let mut vectors = self.clause_vectors(examples)?;
        let mut curve = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let order = self.shuffled(examples.len());
            let mut tally = EpochTally::default();
            {
                let Trainer {
                    config,
                    model,
                    policies,
                    progress,
                    rng,
                } = self;
                for di in order {
                    let ex = &examples[di];
                    for q in &ex.queries {
                        let ctx = Context {
                            model,
                            config,
                            clause_vectors: &vectors[di],
                            words: &ex.clauses,
                            aspect: &model.aspects[q.aspect].embedding,
                            gold: q.rating,
                        };
                        let ep = update_on_query(ctx, policies, rng, progress, rewards)?;
                        tally.add(&ep);
                    }
                }
            }
            self.progress.policy_epochs += 1;
            curve.push(tally.finish(self.progress.policy_epochs));
            if self.config.fine_tune {
                self.fine_tune_epoch(examples, &vectors)?;
                vectors = self.clause_vectors(examples)?;
            }
        }
        Ok(curve)
    }

    fn clause_vectors(&self, examples: &[Example]) -> Result<Vec<Vec<Vec<f64>>>> {
        examples.iter().map(|ex| self.model.clause_vectors(ex)).collect()
    }

    /// One Adam epoch on the document head loss over the greedy
    /// selections of the current policies.
    fn fine_tune_epoch(&mut self, examples: &[Example], vectors: &[Vec<Vec<f64>>]) -> Result<f64> {
        let mut masks = Vec::with_capacity(examples.len());
        for (ex, cv) in examples.iter().zip(vectors) {
            let per_query = ex
                .queries
                .iter()
                .map(|q| {
                    let ctx = Context {
                        model: &self.model,
                        config: &self.config,
                        clause_vectors: cv,
                        words: &ex.clauses,
                        aspect: &self.model.aspects[q.aspect].embedding,
                        gold: q.rating,
                    };
                    let ep = rollout(ctx, &self.policies, &mut Decode::<ChaCha8Rng>::Greedy, &PredictorRewards)?;
                    Ok(Selection {
                        clauses: ep.options(),
                        words: ep.word_masks(&ex.clauses),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            masks.push(per_query);
        }
        let mut params = self.model.word_stage_params();
        params.extend(self.model.clause_stage_params());
        let enc = Encoders::of(&self.model);
        let reset = self.config.reset_low_per_clause;
        let losses = self.supervised_epochs(examples, 1, &params, |tape, di, _| {
            enc.selection(tape, &examples[di], &vectors[di], &masks[di], reset)
        })?;
        self.progress.fine_tune_epochs += 1;
        Ok(losses[0])
    }

    /// Runs the whole schedule with the configured epoch counts.
    pub fn fit(&mut self, train: &[Example]) -> Result<TrainingLog> {
        let word_losses = self.pretrain_low(train, self.config.pretrain_low_epochs)?;
        let clause_losses = self.pretrain_high(train, self.config.pretrain_high_epochs)?;
        let rewards = self.train_policies(train, self.config.policy_epochs)?;
        Ok(TrainingLog {
            word_losses,
            clause_losses,
            rewards,
        })
    }
}

#[cfg(test)]
mod tests;
