//! Cross-attention over segment features queried by a verb embedding,
//! followed by an MLP head producing one score per adverb.
//!
//! ```text
//! q = g(v) Wq + bq                      (B x E)
//! k = X Wk + bk,  v = X Wv + bv         (B*t x E)
//! per head h: w_h = softmax_masked(q_h k_hᵀ / sqrt(E / heads))
//! context = concat_h(w_h v_h) Wo + bo   (B x E)
//! scores  = MLP(context)                (B x A), ReLU + dropout on hidden layers
//! ```
//!
//! There is no positional encoding, so outputs do not depend on segment
//! order.

mod checkpoint;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndnum::{Array, NodeId, Rng, Scalar, Tape};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_seg: usize,
    pub d_text: usize,
    /// Query/key/value width `E`.
    pub embed: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub mlp_hidden_layers: usize,
    pub dropout: f64,
    pub num_adverbs: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_seg: 1024,
            d_text: 512,
            embed: 512,
            heads: 4,
            mlp_hidden: 512,
            mlp_hidden_layers: 1,
            dropout: 0.1,
            num_adverbs: 10,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_seg", self.d_seg),
            ("d_text", self.d_text),
            ("embed", self.embed),
            ("heads", self.heads),
            ("mlp_hidden", self.mlp_hidden),
            ("num_adverbs", self.num_adverbs),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be >= 1")));
        }
        if !self.embed.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embed {} not divisible by {} heads",
                self.embed, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed / self.heads
    }

    /// `(name, [fan_in, fan_out])` for every weight matrix, in parameter
    /// order; each is followed by its bias.
    fn layers(&self) -> Vec<(String, usize, usize)> {
        let mut out = vec![
            ("attn.query".to_string(), self.d_text, self.embed),
            ("attn.key".to_string(), self.d_seg, self.embed),
            ("attn.value".to_string(), self.d_seg, self.embed),
            ("attn.out".to_string(), self.embed, self.embed),
        ];
        let mut width = self.embed;
        for i in 0..self.mlp_hidden_layers {
            out.push((format!("mlp.{i}"), width, self.mlp_hidden));
            width = self.mlp_hidden;
        }
        out.push((format!("mlp.{}", self.mlp_hidden_layers), width, self.num_adverbs));
        out
    }

    /// Expected `(name, shape)` of every parameter array.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.layers()
            .into_iter()
            .flat_map(|(name, i, o)| {
                [
                    (format!("{name}.weight"), vec![i, o]),
                    (format!("{name}.bias"), vec![o]),
                ]
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub attention: usize,
    pub mlp: usize,
    pub total: usize,
}

/// Exact weight-plus-bias counts for the attention block and the MLP.
pub fn count_params(config: &ModelConfig) -> ParamCount {
    let mut attention = 0;
    let mut mlp = 0;
    for (name, shape) in config.param_shapes() {
        let n: usize = shape.iter().product();
        if name.starts_with("attn.") {
            attention += n;
        } else {
            mlp += n;
        }
    }
    ParamCount {
        attention,
        mlp,
        total: attention + mlp,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Scalar> {
    pub name: String,
    pub value: Array<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Scalar = f32> {
    pub config: ModelConfig,
    pub params: Vec<Param<T>>,
}

// Parameter slots; MLP layers follow from MLP_START in (weight, bias) pairs.
const WQ: usize = 0;
const BQ: usize = 1;
const WK: usize = 2;
const BK: usize = 3;
const WV: usize = 4;
const BV: usize = 5;
const WO: usize = 6;
const BO: usize = 7;
const MLP_START: usize = 8;

impl<T: Scalar> ModelParams<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let params = config
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let value = if name.ends_with(".weight") {
                    let s = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    let data = (0..shape[0] * shape[1])
                        .map(|_| T::from_f64_lossy(rng.uniform_range(-s, s)))
                        .collect();
                    Array::new(shape, data)?
                } else {
                    Array::zeros(shape)
                };
                Ok(Param { name, value })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            params,
        })
    }

    /// Checks names and shapes against the config.
    pub fn from_parts(config: ModelConfig, params: Vec<Param<T>>) -> Result<Self> {
        config.validate()?;
        let expected = config.param_shapes();
        if expected.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter arrays, got {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in expected.iter().zip(&params) {
            if name != &p.name || shape.as_slice() != p.value.shape() {
                return Err(Error::Config(format!(
                    "parameter {:?} {:?} does not match expected {name:?} {shape:?}",
                    p.name,
                    p.value.shape()
                )));
            }
            if !p.value.is_finite() {
                return Err(Error::NonFinite("model parameters"));
            }
        }
        Ok(Self { config, params })
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
        }
    }

    pub fn arrays(&self) -> Vec<&Array<T>> {
        self.params.iter().map(|p| &p.value).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// A padded batch of videos and their verb queries.
#[derive(Clone, Debug)]
pub struct BatchInput<T: Scalar = f32> {
    /// `(B*t) x d_seg`, item `b` occupying rows `b*t..(b+1)*t`.
    pub segments: Array<T>,
    /// `B*t`; false on padding.
    pub mask: Vec<bool>,
    /// Padded segment count.
    pub t: usize,
    /// `B x d_text`.
    pub queries: Array<T>,
}

impl<T: Scalar> BatchInput<T> {
    /// Pads each `(segments, query)` item to the longest `t` in the batch.
    pub fn assemble(items: &[(&Array<f32>, &[f32])]) -> Result<Self> {
        let d_seg = items.first().map_or(0, |(s, _)| s.cols());
        let d_text = items.first().map_or(0, |(_, q)| q.len());
        let t = items.iter().map(|(s, _)| s.rows()).max().unwrap_or(0);
        let b = items.len();
        let mut seg = vec![T::zero(); b * t * d_seg];
        let mut mask = vec![false; b * t];
        let mut queries = Vec::with_capacity(b * d_text);
        for (i, (s, q)) in items.iter().enumerate() {
            if s.cols() != d_seg || q.len() != d_text {
                return Err(Error::dim("assemble", "items disagree on feature dims"));
            }
            for (j, &x) in s.data().iter().enumerate() {
                seg[i * t * d_seg + j] = T::from_f64_lossy(x as f64);
            }
            mask[i * t..i * t + s.rows()].fill(true);
            queries.extend(q.iter().map(|&x| T::from_f64_lossy(x as f64)));
        }
        Ok(Self {
            segments: Array::matrix(b * t, d_seg, seg)?,
            mask,
            t,
            queries: Array::matrix(b, d_text, queries)?,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.queries.rows()
    }
}

/// Node handles of one forward pass recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ForwardNodes {
    pub context: NodeId,
    pub predictions: NodeId,
    pub attention: NodeId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput<T: Scalar = f32> {
    /// `B x E`.
    pub context: Array<T>,
    /// `B x A`.
    pub predictions: Array<T>,
    /// `(B*heads) x t`, row `b*heads + h`.
    pub attention: Array<T>,
}

/// Records the forward pass on `tape`. `param_nodes` are the leaves holding
/// the parameters in [`ModelParams`] order. Dropout is active only when
/// `dropout_rng` is given.
pub fn forward_graph<T: Scalar>(
    tape: &mut Tape<T>,
    config: &ModelConfig,
    param_nodes: &[NodeId],
    input: &BatchInput<T>,
    dropout_rng: Option<&mut Rng>,
) -> Result<ForwardNodes> {
    let p = param_nodes;
    if input.segments.cols() != config.d_seg || input.queries.cols() != config.d_text {
        return Err(Error::dim(
            "forward",
            format!(
                "segments {:?} / queries {:?} for d_seg={} d_text={}",
                input.segments.shape(),
                input.queries.shape(),
                config.d_seg,
                config.d_text
            ),
        ));
    }
    let b = input.batch_size();
    let heads = config.heads;
    let t = input.t;
    if let Some(i) = (0..b).find(|&i| !input.mask[i * t..(i + 1) * t].iter().any(|&m| m)) {
        return Err(Error::Degenerate(format!("batch item {i} has no unmasked segment")));
    }

    let x = tape.leaf(input.segments.clone())?;
    let qin = tape.leaf(input.queries.clone())?;
    let q = tape.matmul(qin, p[WQ])?;
    let q = tape.add(q, p[BQ])?;
    let k = tape.matmul(x, p[WK])?;
    let k = tape.add(k, p[BK])?;
    let v = tape.matmul(x, p[WV])?;
    let v = tape.add(v, p[BV])?;

    let scores = tape.head_scores(q, k, heads, t)?;
    let scores = tape.scale(scores, T::from_f64_lossy(1.0 / (config.head_dim() as f64).sqrt()))?;
    let head_mask: Vec<bool> = (0..b)
        .flat_map(|i| {
            let row = &input.mask[i * t..(i + 1) * t];
            std::iter::repeat_n(row, heads).flatten().copied()
        })
        .collect();
    let attention = tape.softmax_masked(scores, &head_mask)?;
    let mixed = tape.head_mix(attention, v, heads, t)?;
    let context = tape.matmul(mixed, p[WO])?;
    let context = tape.add(context, p[BO])?;

    let mut rng = dropout_rng;
    let mut h = context;
    for layer in 0..config.mlp_hidden_layers {
        let w = p[MLP_START + 2 * layer];
        let bias = p[MLP_START + 2 * layer + 1];
        h = tape.matmul(h, w)?;
        h = tape.add(h, bias)?;
        h = tape.relu(h)?;
        if let Some(r) = rng.as_deref_mut() {
            h = tape.dropout(h, config.dropout, r, true)?;
        }
    }
    let last = MLP_START + 2 * config.mlp_hidden_layers;
    let out = tape.matmul(h, p[last])?;
    let predictions = tape.add(out, p[last + 1])?;
    Ok(ForwardNodes {
        context,
        predictions,
        attention,
    })
}

/// Places every parameter on `tape` as a leaf.
pub fn param_leaves<T: Scalar>(tape: &mut Tape<T>, params: &ModelParams<T>) -> Result<Vec<NodeId>> {
    params.params.iter().map(|p| tape.leaf(p.value.clone())).collect()
}

pub fn forward_batch<T: Scalar>(
    params: &ModelParams<T>,
    input: &BatchInput<T>,
    dropout_rng: Option<&mut Rng>,
) -> Result<ForwardOutput<T>> {
    let mut tape = Tape::new();
    let leaves = param_leaves(&mut tape, params)?;
    let n = forward_graph(&mut tape, &params.config, &leaves, input, dropout_rng)?;
    Ok(ForwardOutput {
        context: tape.value(n.context).clone(),
        predictions: tape.value(n.predictions).clone(),
        attention: tape.value(n.attention).clone(),
    })
}

/// Single-video forward pass. `segments` is `t x d_seg`, `mask` has length
/// `t`, `query` is the verb embedding.
pub fn forward<T: Scalar>(
    params: &ModelParams<T>,
    segments: &Array<T>,
    mask: &[bool],
    query: &[T],
    dropout_rng: Option<&mut Rng>,
) -> Result<ForwardOutput<T>> {
    if mask.len() != segments.rows() {
        return Err(Error::dim(
            "forward",
            format!("mask length {} for {} segments", mask.len(), segments.rows()),
        ));
    }
    let input = BatchInput {
        segments: segments.clone(),
        mask: mask.to_vec(),
        t: segments.rows(),
        queries: Array::matrix(1, query.len(), query.to_vec())?,
    };
    forward_batch(params, &input, dropout_rng)
}

/// Eval-mode scores of one video under every verb query: row `v` of the
/// result is `forward` with query `verb_queries[v]`.
pub fn predict_all_verbs<T: Scalar>(
    params: &ModelParams<T>,
    segments: &Array<T>,
    mask: &[bool],
    verb_queries: &Array<T>,
) -> Result<Array<T>> {
    let nv = verb_queries.rows();
    if mask.len() != segments.rows() {
        return Err(Error::dim(
            "predict_all_verbs",
            "mask length differs from segment count",
        ));
    }
    let t = segments.rows();
    let mut seg = Vec::with_capacity(nv * segments.len());
    let mut m = Vec::with_capacity(nv * t);
    for _ in 0..nv {
        seg.extend_from_slice(segments.data());
        m.extend_from_slice(mask);
    }
    let input = BatchInput {
        segments: Array::matrix(nv * t, segments.cols(), seg)?,
        mask: m,
        t,
        queries: verb_queries.clone(),
    };
    Ok(forward_batch(params, &input, None)?.predictions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndnum::Stream;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_seg: 6,
            d_text: 5,
            embed: 8,
            heads: 2,
            mlp_hidden: 7,
            mlp_hidden_layers: 1,
            dropout: 0.1,
            num_adverbs: 4,
        }
    }

    fn random_array(rng: &mut Rng, shape: Vec<usize>) -> Array<f32> {
        let n = shape.iter().product();
        Array::new(shape, (0..n).map(|_| rng.normal() as f32).collect()).unwrap()
    }

    #[test]
    fn default_mlp_count() {
        assert_eq!(count_params(&ModelConfig::default()).mlp, 267_786);
        let six = ModelConfig {
            num_adverbs: 6,
            ..ModelConfig::default()
        };
        assert_eq!(count_params(&six).mlp, 265_734);
    }

    #[test]
    fn attention_count_matches_layout() {
        let c = count_params(&ModelConfig::default());
        assert_eq!(
            c.attention,
            (512 * 512 + 512) + 2 * (1024 * 512 + 512) + (512 * 512 + 512)
        );
        assert_eq!(c.total, c.attention + c.mlp);
    }

    #[test]
    fn config_validation() {
        let mut c = tiny();
        c.heads = 3;
        assert!(c.validate().is_err());
        c = tiny();
        c.num_adverbs = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn init_is_seeded_and_biases_zero() {
        let a = ModelParams::<f32>::init(&tiny(), &mut Rng::new(4, Stream::Init)).unwrap();
        let b = ModelParams::<f32>::init(&tiny(), &mut Rng::new(4, Stream::Init)).unwrap();
        assert_eq!(a, b);
        for p in a.params.iter().filter(|p| p.name.ends_with(".bias")) {
            assert!(p.value.data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn init_weight_mean_near_zero() {
        let cfg = ModelConfig { d_seg: 400, ..tiny() };
        let p = ModelParams::<f64>::init(&cfg, &mut Rng::new(9, Stream::Init)).unwrap();
        let w = &p.params[WK].value;
        let s = (6.0f64 / 408.0).sqrt();
        let n = w.len() as f64;
        let mean = w.sum() / n;
        // Uniform(-s, s) has variance s^2 / 3.
        let sigma = (s * s / 3.0 / n).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean} sigma {sigma}");
        assert!(w.data().iter().all(|x| x.abs() <= s));
    }

    #[test]
    fn single_segment_attends_fully() {
        let mut rng = Rng::new(1, Stream::Test);
        let p = ModelParams::<f32>::init(&tiny(), &mut Rng::new(1, Stream::Init)).unwrap();
        let seg = random_array(&mut rng, vec![1, 6]);
        let q1 = random_array(&mut rng, vec![5]).into_data();
        let q2 = random_array(&mut rng, vec![5]).into_data();
        let a = forward(&p, &seg, &[true], &q1, None).unwrap();
        let b = forward(&p, &seg, &[true], &q2, None).unwrap();
        assert!(a.attention.data().iter().all(|&w| w == 1.0));
        assert_eq!(a.context, b.context);
    }

    #[test]
    fn duplicated_segments_keep_context() {
        let mut rng = Rng::new(2, Stream::Test);
        let p = ModelParams::<f32>::init(&tiny(), &mut Rng::new(2, Stream::Init)).unwrap();
        let seg = random_array(&mut rng, vec![3, 6]);
        let mut doubled = seg.data().to_vec();
        doubled.extend_from_slice(seg.data());
        let seg2 = Array::matrix(6, 6, doubled).unwrap();
        let q = random_array(&mut rng, vec![5]).into_data();
        let a = forward(&p, &seg, &[true; 3], &q, None).unwrap();
        let b = forward(&p, &seg2, &[true; 6], &q, None).unwrap();
        for (x, y) in a.context.data().iter().zip(b.context.data()) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn masked_segments_get_zero_weight() {
        let mut rng = Rng::new(3, Stream::Test);
        let p = ModelParams::<f32>::init(&tiny(), &mut Rng::new(3, Stream::Init)).unwrap();
        let seg = random_array(&mut rng, vec![4, 6]);
        let q = random_array(&mut rng, vec![5]).into_data();
        let out = forward(&p, &seg, &[true, false, true, false], &q, None).unwrap();
        for h in 0..2 {
            let row = out.attention.row(h);
            assert_eq!(row[1], 0.0);
            assert_eq!(row[3], 0.0);
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn fully_masked_is_degenerate() {
        let p = ModelParams::<f32>::init(&tiny(), &mut Rng::new(3, Stream::Init)).unwrap();
        let seg = Array::zeros(vec![2, 6]);
        let err = forward(&p, &seg, &[false, false], &[0.0; 5], None).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn predict_all_verbs_matches_loop_bitwise() {
        let mut rng = Rng::new(5, Stream::Test);
        let p = ModelParams::<f32>::init(&tiny(), &mut Rng::new(5, Stream::Init)).unwrap();
        let seg = random_array(&mut rng, vec![4, 6]);
        let mask = [true, true, true, false];
        let queries = random_array(&mut rng, vec![3, 5]);
        let all = predict_all_verbs(&p, &seg, &mask, &queries).unwrap();
        for v in 0..3 {
            let one = forward(&p, &seg, &mask, queries.row(v), None).unwrap();
            assert_eq!(one.predictions.data(), all.row(v));
        }
    }

    #[test]
    fn feature_scale_stays_finite() {
        let mut rng = Rng::new(6, Stream::Test);
        let p = ModelParams::<f32>::init(&tiny(), &mut Rng::new(6, Stream::Init)).unwrap();
        let seg = random_array(&mut rng, vec![5, 6]);
        let q = random_array(&mut rng, vec![5]).into_data();
        for c in [1e-3f32, 1.0, 1e3] {
            let out = forward(&p, &seg.map(|x| x * c), &[true; 5], &q, None).unwrap();
            assert!(out.predictions.is_finite());
        }
    }

    #[test]
    fn dropout_only_in_train_mode() {
        let mut rng = Rng::new(8, Stream::Test);
        let p = ModelParams::<f32>::init(&tiny(), &mut Rng::new(8, Stream::Init)).unwrap();
        let seg = random_array(&mut rng, vec![3, 6]);
        let q = random_array(&mut rng, vec![5]).into_data();
        let e1 = forward(&p, &seg, &[true; 3], &q, None).unwrap();
        let e2 = forward(&p, &seg, &[true; 3], &q, None).unwrap();
        assert_eq!(e1, e2);
        let mut drop = Rng::new(8, Stream::Dropout);
        let cfg_heavy = ModelConfig { dropout: 0.5, ..tiny() };
        let ph = ModelParams::from_parts(cfg_heavy, p.params.clone()).unwrap();
        let tr = forward(&ph, &seg, &[true; 3], &q, Some(&mut drop)).unwrap();
        assert_ne!(tr.predictions, e1.predictions);
    }
}
