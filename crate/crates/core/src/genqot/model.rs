use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::STEP_DIM;
use super::{EncoderKind, FeatureSpec, Features, GenQotError, GenQotHyper, NormStats};
use crate::engine::{
    causal_conv, gru_step, init_causal_conv, init_gru, init_mlp, mlp, Axis, Builder, Gradients, NodeId, Optimizer,
    ParamStore, Tape, Tensor,
};
use crate::grid::{decode_prefix, ArrivalClass, ArrivalClassGrid, ArrivalSequence, Decoded};
use crate::sim::{FillSampler, SampledFills};
use crate::world::HistorySlice;

pub const MODEL_BUNDLE_VERSION: u32 = 1;

/// Shares at or above the grid's top edge go to the last share bin.
pub fn clamp_share(grid: &ArrivalClassGrid, share: f64) -> f64 {
    let top = grid.share_max();
    if share >= top {
        top * (1.0 - 1e-9)
    } else {
        share
    }
}

/// Token ids of an arrival sequence, sentinel last.
pub fn encode_for_model(seq: &ArrivalSequence, grid: &ArrivalClassGrid) -> Result<Vec<usize>, GenQotError> {
    let mut out = Vec::new();
    for (k, share) in seq.tuples() {
        let class = grid.classify(k, clamp_share(grid, share))?;
        out.push(grid.token_of(class)?);
    }
    out.push(0);
    Ok(out)
}

/// One training order: raw context features and its token sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub features: Features,
    pub tokens: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub seed: u64,
    /// Mean per-token NLL before the first update.
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
    pub validation_losses: Vec<f64>,
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledSequence {
    pub classes: Vec<ArrivalClass>,
    pub forced_stop: bool,
    pub decoded: Decoded,
}

#[derive(Clone, Debug)]
pub struct GenQotModel {
    hyper: GenQotHyper,
    grid: ArrivalClassGrid,
    spec: FeatureSpec,
    norm: NormStats,
    max_len: usize,
    params: ParamStore<f64>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    max_len: usize,
    dataset_hash: String,
    seed: u64,
}

fn one_hot(tokens: &[Option<usize>], vocab: usize) -> Tensor<f64> {
    let mut data = vec![0.0; tokens.len() * vocab];
    for (r, t) in tokens.iter().enumerate() {
        if let Some(t) = t {
            data[r * vocab + t] = 1.0;
        }
    }
    Tensor::matrix(tokens.len(), vocab, data).expect("sized")
}

struct Batch {
    statics: Tensor<f64>,
    steps: Vec<Tensor<f64>>,
}

impl GenQotModel {
    pub fn new(hyper: GenQotHyper, grid: ArrivalClassGrid, spec: FeatureSpec, seed: u64) -> Result<Self, GenQotError> {
        hyper.validate()?;
        if spec.flat_dim() == 0 {
            return Err(GenQotError::Invalid("empty feature vector".into()));
        }
        if grid.tau_max() < spec.max_lead + 1 {
            return Err(GenQotError::Invalid(format!(
                "grid covers gaps below {} but lead times reach {}",
                grid.tau_max(),
                spec.max_lead
            )));
        }
        let max_len = hyper.max_len.unwrap_or(spec.max_lead + 1);
        let vocab = grid.num_tokens();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let w = hyper.mlp_width;
        match hyper.encoder {
            EncoderKind::Mlp => init_mlp(&mut params, "enc.mlp", &[spec.flat_dim(), w, w], &mut rng),
            EncoderKind::CausalConv => {
                let mut ch = STEP_DIM;
                for k in 0..hyper.dilations.len() {
                    init_causal_conv(&mut params, &format!("enc.conv.{k}"), ch, hyper.conv_channels, &mut rng);
                    ch = hyper.conv_channels;
                }
                init_mlp(&mut params, "enc.mlp", &[spec.static_dim() + ch, w, w], &mut rng);
            }
        }
        let h = hyper.recurrent_width;
        for l in 0..hyper.recurrent_layers {
            params.init_dense(&format!("init.{l}"), w, h, &mut rng);
            let input = if l == 0 { vocab + w } else { h };
            init_gru(&mut params, &format!("gru.{l}"), input, h, &mut rng);
        }
        params.init_dense("out", h, vocab, &mut rng);
        Ok(Self {
            norm: NormStats::identity(&spec),
            hyper,
            grid,
            spec,
            max_len,
            params,
        })
    }

    pub fn hyper(&self) -> &GenQotHyper {
        &self.hyper
    }

    pub fn grid(&self) -> &ArrivalClassGrid {
        &self.grid
    }

    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn norm(&self) -> &NormStats {
        &self.norm
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn vocab(&self) -> usize {
        self.grid.num_tokens()
    }

    pub fn params(&self) -> &ParamStore<f64> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f64> {
        &mut self.params
    }

    pub fn set_norm(&mut self, norm: NormStats) {
        self.norm = norm;
    }

    /// Installs quantity-weighted data-mean representatives from observed
    /// sequences (shares clamped as in training).
    pub fn fit_representatives(&mut self, sequences: &[ArrivalSequence]) {
        let grid = &self.grid;
        let tuples: Vec<(usize, f64)> = sequences
            .iter()
            .flat_map(|s| s.tuples().into_iter().map(|(k, sh)| (k, clamp_share(grid, sh))))
            .collect();
        self.grid.fit_representatives(&tuples);
    }

    pub fn example(&self, slice: &HistorySlice, seq: &ArrivalSequence) -> Result<TrainExample, GenQotError> {
        Ok(TrainExample {
            features: self.spec.featurize(slice, seq.order)?,
            tokens: encode_for_model(seq, &self.grid)?,
        })
    }

    fn batch(&self, feats: &[&Features]) -> Result<Batch, GenQotError> {
        let rows: Vec<Features> = feats.iter().map(|f| self.norm.apply(f)).collect();
        for f in &rows {
            if f.statics.len() != self.spec.static_dim() || f.steps.len() != self.spec.window {
                return Err(GenQotError::Dimension {
                    got: f.statics.len() + f.steps.len() * STEP_DIM,
                    expected: self.spec.flat_dim(),
                });
            }
        }
        let statics = match self.hyper.encoder {
            EncoderKind::Mlp => Tensor::from_rows(&rows.iter().map(Features::flatten).collect::<Vec<_>>())?,
            EncoderKind::CausalConv => Tensor::from_rows(&rows.iter().map(|f| f.statics.clone()).collect::<Vec<_>>())?,
        };
        let steps = match self.hyper.encoder {
            EncoderKind::Mlp => Vec::new(),
            EncoderKind::CausalConv => (0..self.spec.window)
                .map(|k| Tensor::from_rows(&rows.iter().map(|f| f.steps[k].to_vec()).collect::<Vec<_>>()))
                .collect::<Result<_, _>>()?,
        };
        Ok(Batch { statics, steps })
    }

    fn encode<B: Builder<f64>>(&self, b: &mut B, batch: &Batch) -> NodeId {
        let statics = b.constant(batch.statics.clone());
        let x = match self.hyper.encoder {
            EncoderKind::Mlp => statics,
            EncoderKind::CausalConv => {
                let mut steps: Vec<NodeId> = batch.steps.iter().map(|s| b.constant(s.clone())).collect();
                for (k, &d) in self.hyper.dilations.iter().enumerate() {
                    steps = causal_conv(b, &steps, &format!("enc.conv.{k}"), d);
                }
                let last = *steps.last().expect("window >= 1");
                b.concat(vec![statics, last], Axis::Cols)
            }
        };
        mlp(b, x, "enc.mlp", 2, true)
    }

    fn initial_states<B: Builder<f64>>(&self, b: &mut B, ctx: NodeId) -> Vec<NodeId> {
        (0..self.hyper.recurrent_layers)
            .map(|l| {
                let z = b.dense(ctx, &format!("init.{l}"));
                b.tanh(z)
            })
            .collect()
    }

    fn step<B: Builder<f64>>(&self, b: &mut B, ctx: NodeId, prev: NodeId, states: &mut [NodeId]) -> NodeId {
        let mut x = b.concat(vec![prev, ctx], Axis::Cols);
        for (l, h) in states.iter_mut().enumerate() {
            *h = gru_step(b, x, *h, &format!("gru.{l}"), self.hyper.recurrent_width);
            x = *h;
        }
        b.dense(x, "out")
    }

    /// Summed token cross-entropy of teacher-forced sequences on `b`, and
    /// the number of scored tokens. Sequences longer than the maximum
    /// length lose their trailing tokens (a forced stop is not scored).
    fn loss_on<B: Builder<f64>>(&self, b: &mut B, batch: &Batch, tokens: &[&[usize]]) -> (NodeId, usize) {
        let vocab = self.vocab();
        let lens: Vec<usize> = tokens.iter().map(|t| t.len().min(self.max_len)).collect();
        let steps = lens.iter().copied().max().unwrap_or(0);
        let ctx = self.encode(b, batch);
        let mut states = self.initial_states(b, ctx);
        let mut total = b.scalar(0.0);
        for j in 0..steps {
            let prev: Vec<Option<usize>> = tokens
                .iter()
                .zip(&lens)
                .map(|(t, &n)| (j > 0 && j <= n).then(|| t[j - 1]))
                .collect();
            let target: Vec<Option<usize>> = tokens.iter().zip(&lens).map(|(t, &n)| (j < n).then(|| t[j])).collect();
            let prev = b.constant(one_hot(&prev, vocab));
            let logits = self.step(b, ctx, prev, &mut states);
            let target = b.constant(one_hot(&target, vocab));
            let ce = b.softmax_cross_entropy(logits, target);
            total = b.add(total, ce);
        }
        (total, lens.iter().sum())
    }

    /// Mean per-token NLL of `examples` under `params`, with its gradient
    /// when requested.
    pub fn batch_loss(
        &self,
        params: &ParamStore<f64>,
        examples: &[&TrainExample],
        with_gradient: bool,
    ) -> Result<(f64, Option<Gradients<f64>>), GenQotError> {
        if examples.is_empty() {
            return Err(GenQotError::EmptyDataset);
        }
        for e in examples {
            if e.tokens.last() != Some(&0) || e.tokens[..e.tokens.len() - 1].contains(&0) {
                return Err(GenQotError::MissingSentinel);
            }
            if let Some(&t) = e.tokens.iter().find(|&&t| t >= self.vocab()) {
                return Err(GenQotError::Invalid(format!("token {t} outside vocabulary")));
            }
        }
        let feats: Vec<&Features> = examples.iter().map(|e| &e.features).collect();
        let batch = self.batch(&feats)?;
        let tokens: Vec<&[usize]> = examples.iter().map(|e| e.tokens.as_slice()).collect();
        let mut tape = Tape::new(params);
        let (sum, n) = self.loss_on(&mut tape, &batch, &tokens);
        let mean = tape.scale(sum, 1.0 / n.max(1) as f64);
        let loss = tape.value(mean)?.data()[0];
        let grads = if with_gradient {
            Some(tape.gradient(mean)?)
        } else {
            None
        };
        Ok((loss, grads))
    }

    /// Token-weighted mean NLL over a dataset, evaluated in chunks.
    pub fn mean_loss(&self, examples: &[TrainExample]) -> Result<f64, GenQotError> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for chunk in examples.chunks(256) {
            let refs: Vec<&TrainExample> = chunk.iter().collect();
            let (l, _) = self.batch_loss(&self.params, &refs, false)?;
            let k: usize = chunk.iter().map(|e| e.tokens.len().min(self.max_len)).sum();
            sum += l * k as f64;
            n += k;
        }
        if n == 0 {
            return Err(GenQotError::EmptyDataset);
        }
        Ok(sum / n as f64)
    }

    /// Teacher-forced training with Adam (or SGD) on shuffled mini-batches.
    /// Normalization statistics are refit on `train` first. With a
    /// validation set the parameters of the best validation epoch are kept.
    pub fn train(
        &mut self,
        train: &[TrainExample],
        valid: Option<&[TrainExample]>,
        seed: u64,
    ) -> Result<TrainingRecord, GenQotError> {
        if train.is_empty() {
            return Err(GenQotError::EmptyDataset);
        }
        let started = Instant::now();
        let feats: Vec<Features> = train.iter().map(|e| e.features.clone()).collect();
        self.norm = NormStats::fit(&self.spec, &feats);
        let initial_loss = self.mean_loss(train)?;
        let mut opt = Optimizer::new(self.hyper.optimizer, self.hyper.learning_rate).with_clip_norm(5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut epoch_losses = Vec::with_capacity(self.hyper.epochs);
        let mut validation_losses = Vec::new();
        let mut best: Option<(f64, ParamStore<f64>)> = None;
        for epoch in 0..self.hyper.epochs {
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            let mut count = 0usize;
            for chunk in order.chunks(self.hyper.batch_size) {
                let refs: Vec<&TrainExample> = chunk.iter().map(|&i| &train[i]).collect();
                let (loss, grads) = self.batch_loss(&self.params, &refs, true)?;
                let grads = grads.expect("requested");
                if !loss.is_finite() || !grads.is_finite() {
                    return Err(GenQotError::Diverged { epoch, loss });
                }
                let k: usize = refs.iter().map(|e| e.tokens.len().min(self.max_len)).sum();
                sum += loss * k as f64;
                count += k;
                opt.step(&mut self.params, &grads);
            }
            let loss = sum / count as f64;
            log::debug!("gen-qot epoch {epoch}: loss {loss:.5}");
            epoch_losses.push(loss);
            if let Some(v) = valid.filter(|v| !v.is_empty()) {
                let vl = self.mean_loss(v)?;
                validation_losses.push(vl);
                if best.as_ref().is_none_or(|(b, _)| vl < *b) {
                    best = Some((vl, self.params.clone()));
                }
            }
        }
        if let Some((_, params)) = best {
            self.params = params;
        }
        Ok(TrainingRecord {
            seed,
            initial_loss,
            epoch_losses,
            validation_losses,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        })
    }

    fn start(&self, feats: &[&Features]) -> Result<(Tensor<f64>, Vec<Tensor<f64>>), GenQotError> {
        let batch = self.batch(feats)?;
        let mut tape = Tape::new(&self.params);
        let ctx = self.encode(&mut tape, &batch);
        let states = self.initial_states(&mut tape, ctx);
        let ctx_v = tape.value(ctx)?.clone();
        let states = states.iter().map(|&s| tape.value(s).cloned()).collect::<Result<_, _>>()?;
        Ok((ctx_v, states))
    }

    fn advance(
        &self,
        ctx: &Tensor<f64>,
        states: &mut [Tensor<f64>],
        prev: &[Option<usize>],
    ) -> Result<Tensor<f64>, GenQotError> {
        let mut tape = Tape::new(&self.params);
        let c = tape.constant(ctx.clone());
        let mut hs: Vec<NodeId> = states.iter().map(|s| tape.constant(s.clone())).collect();
        let p = tape.constant(one_hot(prev, self.vocab()));
        let logits = self.step(&mut tape, c, p, &mut hs);
        let probs = tape.softmax(logits);
        for (s, h) in states.iter_mut().zip(&hs) {
            *s = tape.value(*h)?.clone();
        }
        Ok(tape.value(probs)?.clone())
    }

    /// Probabilities over all tokens (sentinel at index 0) after `prefix`.
    pub fn next_class_distribution(
        &self,
        slice: &HistorySlice,
        action: f64,
        prefix: &[usize],
    ) -> Result<Vec<f64>, GenQotError> {
        let f = self.spec.featurize(slice, action)?;
        self.next_distribution_features(&f, prefix)
    }

    pub fn next_distribution_features(&self, features: &Features, prefix: &[usize]) -> Result<Vec<f64>, GenQotError> {
        if prefix.len() > self.max_len {
            return Err(GenQotError::PrefixTooLong {
                got: prefix.len(),
                max: self.max_len,
            });
        }
        if prefix.contains(&0) {
            return Err(GenQotError::Invalid("prefix contains the sentinel".into()));
        }
        let (ctx, mut states) = self.start(&[features])?;
        let mut prev = None;
        let mut probs = self.advance(&ctx, &mut states, &[prev])?;
        for &t in prefix {
            prev = Some(t);
            probs = self.advance(&ctx, &mut states, &[prev])?;
        }
        Ok(probs.into_data())
    }

    /// Log-probability of a token sequence: terminated by the sentinel, or
    /// exactly `max_len` class tokens (a forced stop).
    pub fn sequence_log_prob(&self, features: &Features, tokens: &[usize]) -> Result<f64, GenQotError> {
        let classes = match tokens.iter().position(|&t| t == 0) {
            Some(p) if p + 1 == tokens.len() => p,
            Some(_) => return Err(GenQotError::Invalid("tokens after the sentinel".into())),
            None if tokens.len() == self.max_len => tokens.len(),
            None => return Err(GenQotError::MissingSentinel),
        };
        if classes > self.max_len {
            return Err(GenQotError::PrefixTooLong {
                got: classes,
                max: self.max_len,
            });
        }
        let scored = tokens.len().min(self.max_len);
        let (ctx, mut states) = self.start(&[features])?;
        let mut lp = 0.0;
        let mut prev = None;
        for &t in &tokens[..scored] {
            let probs = self.advance(&ctx, &mut states, &[prev])?;
            lp += probs.data()[t].ln();
            prev = Some(t);
        }
        Ok(lp)
    }

    /// Ancestral sampling, one sequence per context row, each row drawing
    /// from its own generator.
    pub fn sample_features(
        &self,
        features: &[&Features],
        actions: &[f64],
        rngs: &mut [ChaCha8Rng],
    ) -> Result<Vec<SampledSequence>, GenQotError> {
        let n = features.len();
        if actions.len() != n || rngs.len() != n {
            return Err(GenQotError::Invalid("contexts, actions and generators differ in length".into()));
        }
        let mut tokens: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut done: Vec<bool> = actions.iter().map(|&a| a == 0.0).collect();
        if done.iter().any(|d| !d) {
            let (ctx, mut states) = self.start(features)?;
            let mut prev: Vec<Option<usize>> = vec![None; n];
            for _ in 0..self.max_len {
                if done.iter().all(|&d| d) {
                    break;
                }
                let probs = self.advance(&ctx, &mut states, &prev)?;
                for r in 0..n {
                    if done[r] {
                        continue;
                    }
                    let u: f64 = rngs[r].random();
                    let row = probs.row_slice(r);
                    let mut acc = 0.0;
                    let mut pick = row.len() - 1;
                    for (k, p) in row.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            pick = k;
                            break;
                        }
                    }
                    if pick == 0 {
                        done[r] = true;
                    } else {
                        tokens[r].push(pick);
                        prev[r] = Some(pick);
                    }
                }
            }
        }
        tokens
            .into_iter()
            .zip(done)
            .zip(actions)
            .map(|((toks, finished), &a)| {
                let classes = toks
                    .iter()
                    .map(|&t| self.grid.class_of_token(t))
                    .collect::<Result<Vec<_>, _>>()?;
                let decoded = decode_prefix(&classes, &self.grid, a, self.spec.max_lead)?;
                Ok(SampledSequence {
                    classes,
                    forced_stop: !finished,
                    decoded,
                })
            })
            .collect()
    }

    /// `n` independent samples for one context, reproducible from `seed`.
    pub fn sample_arrivals(
        &self,
        slice: &HistorySlice,
        action: f64,
        n: usize,
        seed: u64,
    ) -> Result<Vec<SampledSequence>, GenQotError> {
        if n == 0 {
            return Err(GenQotError::Invalid("need at least one sample".into()));
        }
        let f = self.spec.featurize(slice, action)?;
        let feats = vec![&f; n];
        let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|k| crate::seed::rng_for(seed, &[k as u64])).collect();
        self.sample_features(&feats, &vec![action; n], &mut rngs)
    }

    pub fn save(&self, dir: impl AsRef<Path>, dataset_hash: &str, seed: u64) -> Result<(), GenQotError> {
        let dir = dir.as_ref();
        let io = |e: std::io::Error| GenQotError::Bundle(e.to_string());
        let json = |e: serde_json::Error| GenQotError::Bundle(e.to_string());
        fs::create_dir_all(dir).map_err(io)?;
        self.params.save(dir.join("params.bin"))?;
        fs::write(dir.join("grid.json"), self.grid.to_json()).map_err(io)?;
        fs::write(dir.join("hyper.json"), serde_json::to_string_pretty(&self.hyper).map_err(json)?).map_err(io)?;
        fs::write(dir.join("features.json"), serde_json::to_string_pretty(&self.spec).map_err(json)?).map_err(io)?;
        fs::write(dir.join("norm.json"), serde_json::to_string_pretty(&self.norm).map_err(json)?).map_err(io)?;
        let manifest = Manifest {
            version: MODEL_BUNDLE_VERSION,
            max_len: self.max_len,
            dataset_hash: dataset_hash.into(),
            seed,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).map_err(json)?).map_err(io)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, GenQotError> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            fs::read_to_string(dir.join(name)).map_err(|e| GenQotError::Bundle(format!("{name}: {e}")))
        };
        let json = |e: serde_json::Error| GenQotError::Bundle(e.to_string());
        let manifest: Manifest = serde_json::from_str(&read("manifest.json")?).map_err(json)?;
        if manifest.version != MODEL_BUNDLE_VERSION {
            return Err(GenQotError::Bundle(format!(
                "bundle version {} (expected {MODEL_BUNDLE_VERSION})",
                manifest.version
            )));
        }
        let mut hyper: GenQotHyper = serde_json::from_str(&read("hyper.json")?).map_err(json)?;
        hyper.max_len = Some(manifest.max_len);
        let grid = ArrivalClassGrid::from_json(&read("grid.json")?)?;
        let spec: FeatureSpec = serde_json::from_str(&read("features.json")?).map_err(json)?;
        let mut model = Self::new(hyper, grid, spec, 0)?;
        model.norm = serde_json::from_str(&read("norm.json")?).map_err(json)?;
        let params = ParamStore::load(dir.join("params.bin"))?;
        for (name, t) in model.params.iter() {
            let p = params
                .get(name)
                .ok_or_else(|| GenQotError::Bundle(format!("missing parameter {name}")))?;
            if p.shape() != t.shape() {
                return Err(GenQotError::Bundle(format!("parameter {name} has shape {:?}", p.shape())));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn dataset_hash(dir: impl AsRef<Path>) -> Result<String, GenQotError> {
        let text = fs::read_to_string(dir.as_ref().join("manifest.json")).map_err(|e| GenQotError::Bundle(e.to_string()))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| GenQotError::Bundle(e.to_string()))?;
        Ok(m.dataset_hash)
    }
}

impl FillSampler for GenQotModel {
    fn history_window(&self) -> usize {
        self.spec.window
    }

    fn sample(
        &self,
        contexts: &[HistorySlice],
        actions: &[f64],
        rngs: &mut [ChaCha8Rng],
    ) -> Result<Vec<SampledFills>, String> {
        let feats = contexts
            .iter()
            .zip(actions)
            .map(|(c, &a)| self.spec.featurize(c, a))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let refs: Vec<&Features> = feats.iter().collect();
        let samples = self.sample_features(&refs, actions, rngs).map_err(|e| e.to_string())?;
        Ok(samples
            .into_iter()
            .map(|s| SampledFills {
                fills: s.decoded.fills,
                forced_stop: s.forced_stop,
            })
            .collect())
    }
}
