//! Single-head self-attention encoder.
//!
//! embed → scaled dot-product self-attention (scale `1/√d`) → mean-pool over
//! positions → linear head → logistic. One layer, no positional encoding.

use rand::Rng;

use super::linalg::{add_at_b, matmul, matmul_bt, softmax};
use super::{pad_tokens, Architecture, Dims, Model};

/// The three projections, each `d × d`, applied as `x · W`.
#[derive(Clone, Copy)]
pub(crate) struct Projections<'a> {
    pub query: &'a [f64],
    pub key: &'a [f64],
    pub value: &'a [f64],
    pub d: usize,
}

pub(crate) struct AttentionCache {
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// `n × n`, rows sum to one.
    pub weights: Vec<f64>,
    /// `n × d`
    pub out: Vec<f64>,
}

pub(crate) struct ProjectionGrads<'a> {
    pub query: &'a mut [f64],
    pub key: &'a mut [f64],
    pub value: &'a mut [f64],
}

impl Projections<'_> {
    pub fn forward(&self, x: &[f64], n: usize) -> AttentionCache {
        let d = self.d;
        let q = matmul(x, n, d, self.query, d);
        let k = matmul(x, n, d, self.key, d);
        let v = matmul(x, n, d, self.value, d);
        let scale = 1.0 / (d as f64).sqrt();
        let mut weights = matmul_bt(&q, n, d, &k, n);
        for row in weights.chunks_mut(n) {
            row.iter_mut().for_each(|s| *s *= scale);
            softmax(row);
        }
        let out = matmul(&weights, n, n, &v, d);
        AttentionCache {
            q,
            k,
            v,
            weights,
            out,
        }
    }

    /// Given `d_out` (`n × d`), accumulates projection gradients and returns
    /// the gradient w.r.t. the input sequence `x`.
    pub fn backward(
        &self,
        x: &[f64],
        n: usize,
        cache: &AttentionCache,
        d_out: &[f64],
        grads: ProjectionGrads<'_>,
    ) -> Vec<f64> {
        let d = self.d;
        let scale = 1.0 / (d as f64).sqrt();
        let a = &cache.weights;
        // dV = Aᵀ dO
        let mut d_v = vec![0.0; n * d];
        add_at_b(&mut d_v, a, n, n, d_out, d);
        // dA = dO Vᵀ, then through the row softmax.
        let d_a = matmul_bt(d_out, n, d, &cache.v, n);
        let mut d_s = vec![0.0; n * n];
        for i in 0..n {
            let row = &a[i * n..(i + 1) * n];
            let g = &d_a[i * n..(i + 1) * n];
            let inner: f64 = row.iter().zip(g).map(|(p, q)| p * q).sum();
            for j in 0..n {
                d_s[i * n + j] = row[j] * (g[j] - inner) * scale;
            }
        }
        let d_q = matmul(&d_s, n, n, &cache.k, d);
        let mut d_k = vec![0.0; n * d];
        add_at_b(&mut d_k, &d_s, n, n, &cache.q, d);

        add_at_b(grads.query, x, n, d, &d_q, d);
        add_at_b(grads.key, x, n, d, &d_k, d);
        add_at_b(grads.value, x, n, d, &d_v, d);

        let mut d_x = matmul_bt(&d_q, n, d, self.query, d);
        for (acc, v) in d_x.iter_mut().zip(matmul_bt(&d_k, n, d, self.key, d)) {
            *acc += v;
        }
        for (acc, v) in d_x.iter_mut().zip(matmul_bt(&d_v, n, d, self.value, d)) {
            *acc += v;
        }
        d_x
    }
}

/// Mean over the `n` rows of an `n × d` matrix.
pub(crate) fn mean_pool(m: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut pooled = vec![0.0; d];
    for row in m.chunks(d) {
        pooled.iter_mut().zip(row).for_each(|(p, v)| *p += v);
    }
    pooled.iter_mut().for_each(|p| *p /= n as f64);
    pooled
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionEncoder {
    pub dims: Dims,
    /// `V × d`
    pub embedding: Vec<f64>,
    /// `d × d` each
    pub query: Vec<f64>,
    pub key: Vec<f64>,
    pub value: Vec<f64>,
    /// `d`
    pub head: Vec<f64>,
    pub head_bias: f64,
}

impl AttentionEncoder {
    pub fn zeros(vocab: usize, d: usize) -> Self {
        Self {
            dims: Dims {
                vocab,
                d,
                filters: 0,
                width: 0,
            },
            embedding: vec![0.0; vocab * d],
            query: vec![0.0; d * d],
            key: vec![0.0; d * d],
            value: vec![0.0; d * d],
            head: vec![0.0; d],
            head_bias: 0.0,
        }
    }

    pub fn random<R: Rng>(vocab: usize, d: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(vocab, d);
        let s = 1.0 / (d as f64).sqrt();
        let es = super::EMBED_INIT_SCALE;
        m.embedding
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-es..es));
        for w in [&mut m.query, &mut m.key, &mut m.value] {
            w.iter_mut().for_each(|v| *v = rng.gen_range(-s..s));
        }
        m.head.iter_mut().for_each(|v| *v = rng.gen_range(-s..s));
        m
    }

    pub(crate) fn projections(&self) -> Projections<'_> {
        Projections {
            query: &self.query,
            key: &self.key,
            value: &self.value,
            d: self.dims.d,
        }
    }

    fn embed(&self, tokens: &[usize]) -> Vec<f64> {
        let d = self.dims.d;
        tokens
            .iter()
            .flat_map(|&t| self.embedding[t * d..(t + 1) * d].iter().copied())
            .collect()
    }

    /// Post-softmax attention matrix (`n × n`) for the padded token sequence.
    pub fn attention_weights(&self, tokens: &[usize]) -> Vec<Vec<f64>> {
        let tokens = pad_tokens(tokens, 1, self.dims.vocab);
        let n = tokens.len();
        let cache = self.projections().forward(&self.embed(&tokens), n);
        cache.weights.chunks(n).map(<[f64]>::to_vec).collect()
    }

    /// Attended representation (`n × d`) before pooling.
    pub fn encode(&self, tokens: &[usize]) -> Vec<Vec<f64>> {
        let tokens = pad_tokens(tokens, 1, self.dims.vocab);
        let n = tokens.len();
        let cache = self.projections().forward(&self.embed(&tokens), n);
        cache.out.chunks(self.dims.d).map(<[f64]>::to_vec).collect()
    }
}

impl Model for AttentionEncoder {
    fn architecture(&self) -> Architecture {
        Architecture::Attention
    }

    fn dims(&self) -> Dims {
        self.dims
    }

    fn logit(&self, tokens: &[usize]) -> f64 {
        let tokens = pad_tokens(tokens, 1, self.dims.vocab);
        let n = tokens.len();
        let cache = self.projections().forward(&self.embed(&tokens), n);
        let pooled = mean_pool(&cache.out, n, self.dims.d);
        super::linalg::dot(&pooled, &self.head) + self.head_bias
    }

    fn backward(&self, tokens: &[usize], d_logit: f64, grad: &mut Self) {
        let d = self.dims.d;
        let tokens = pad_tokens(tokens, 1, self.dims.vocab);
        let n = tokens.len();
        let x = self.embed(&tokens);
        let proj = self.projections();
        let cache = proj.forward(&x, n);
        let pooled = mean_pool(&cache.out, n, d);
        grad.head_bias += d_logit;
        for j in 0..d {
            grad.head[j] += d_logit * pooled[j];
        }
        let row: Vec<f64> = self.head.iter().map(|h| d_logit * h / n as f64).collect();
        let d_out: Vec<f64> = (0..n).flat_map(|_| row.iter().copied()).collect();
        let d_x = proj.backward(
            &x,
            n,
            &cache,
            &d_out,
            ProjectionGrads {
                query: &mut grad.query,
                key: &mut grad.key,
                value: &mut grad.value,
            },
        );
        for (i, &t) in tokens.iter().enumerate() {
            for j in 0..d {
                grad.embedding[t * d + j] += d_x[i * d + j];
            }
        }
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.dims.vocab, self.dims.d)
    }

    fn params(&self) -> Vec<&[f64]> {
        vec![
            &self.embedding,
            &self.query,
            &self.key,
            &self.value,
            &self.head,
            std::slice::from_ref(&self.head_bias),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.embedding,
            &mut self.query,
            &mut self.key,
            &mut self.value,
            &mut self.head,
            std::slice::from_mut(&mut self.head_bias),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(d: usize) -> Vec<f64> {
        (0..d * d)
            .map(|i| if i / d == i % d { 1.0 } else { 0.0 })
            .collect()
    }

    #[test]
    fn zero_encoder_scores_half() {
        let m = AttentionEncoder::zeros(5, 3);
        assert_eq!(m.score(&[1, 2]), 0.5);
        assert_eq!(m.score(&[]), 0.5);
    }

    #[test]
    fn single_token_attends_to_itself() {
        let mut m = AttentionEncoder::random(5, 3, &mut rand::thread_rng());
        m.query = identity(3);
        m.key = identity(3);
        m.value = identity(3);
        let out = m.encode(&[2]);
        assert_eq!(out.len(), 1);
        for j in 0..3 {
            assert!((out[0][j] - m.embedding[2 * 3 + j]).abs() < 1e-15);
        }
        assert_eq!(m.attention_weights(&[2]), vec![vec![1.0]]);
    }

    #[test]
    fn duplicated_token_matches_single() {
        let m = AttentionEncoder::random(7, 4, &mut rand::thread_rng());
        assert!((m.score(&[3, 3]) - m.score(&[3])).abs() < 1e-12);
        assert!((m.score(&[5, 5, 5]) - m.score(&[5])).abs() < 1e-12);
    }

    #[test]
    fn attention_rows_are_distributions() {
        let m = AttentionEncoder::random(9, 4, &mut rand::thread_rng());
        for row in m.attention_weights(&[1, 4, 8, 2, 2, 0]) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&w| w >= 0.0));
        }
    }
}
