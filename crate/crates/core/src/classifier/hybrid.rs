//! CNN feature extractor feeding a self-attention classifier.
//!
//! The convolution + ReLU maps (one `F`-vector per position, not pooled) are
//! projected linearly to `d` and become the attention encoder's input
//! sequence. Pooling and head match [`AttentionEncoder`].

use rand::Rng;

use super::attention::{mean_pool, AttentionEncoder, ProjectionGrads, Projections};
use super::cnn::{CnnModel, Conv};
use super::linalg::{add_at_b, dot, matmul, matmul_bt};
use super::{pad_tokens, Architecture, Dims, Model};

#[derive(Clone, Debug, PartialEq)]
pub struct HybridModel {
    /// `vocab`, `d` (embedding and attention width), `filters`, `width`.
    pub dims: Dims,
    /// `V × d`
    pub embedding: Vec<f64>,
    /// `F × w × d`
    pub conv_filters: Vec<f64>,
    /// `F × d`
    pub projection: Vec<f64>,
    /// `d × d` each
    pub query: Vec<f64>,
    pub key: Vec<f64>,
    pub value: Vec<f64>,
    /// `d`
    pub head: Vec<f64>,
    pub head_bias: f64,
}

impl HybridModel {
    pub fn zeros(vocab: usize, d: usize, filters: usize, width: usize) -> Self {
        let width = width.max(1);
        Self {
            dims: Dims {
                vocab,
                d,
                filters,
                width,
            },
            embedding: vec![0.0; vocab * d],
            conv_filters: vec![0.0; filters * width * d],
            projection: vec![0.0; filters * d],
            query: vec![0.0; d * d],
            key: vec![0.0; d * d],
            value: vec![0.0; d * d],
            head: vec![0.0; d],
            head_bias: 0.0,
        }
    }

    pub fn random<R: Rng>(
        vocab: usize,
        d: usize,
        filters: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        let cnn = CnnModel::random(vocab, d, filters, width, rng);
        let enc = AttentionEncoder::random(0, d, rng);
        let s = 1.0 / (filters.max(1) as f64).sqrt();
        let projection = (0..filters * d).map(|_| rng.gen_range(-s..s)).collect();
        Self::from_parts(&cnn, projection, &enc)
    }

    /// Takes the embedding and filters of `cnn` (its dense layer is unused)
    /// and the projections and head of `encoder` (its embedding is unused).
    pub fn from_parts(cnn: &CnnModel, projection: Vec<f64>, encoder: &AttentionEncoder) -> Self {
        assert_eq!(
            cnn.dims.d, encoder.dims.d,
            "embedding and attention width differ"
        );
        assert_eq!(projection.len(), cnn.dims.filters * cnn.dims.d);
        Self {
            dims: cnn.dims,
            embedding: cnn.embedding.clone(),
            conv_filters: cnn.conv_filters.clone(),
            projection,
            query: encoder.query.clone(),
            key: encoder.key.clone(),
            value: encoder.value.clone(),
            head: encoder.head.clone(),
            head_bias: encoder.head_bias,
        }
    }

    fn conv(&self) -> Conv<'_> {
        Conv {
            embedding: &self.embedding,
            filters: &self.conv_filters,
            d: self.dims.d,
            f: self.dims.filters,
            w: self.dims.width,
        }
    }

    fn projections(&self) -> Projections<'_> {
        Projections {
            query: &self.query,
            key: &self.key,
            value: &self.value,
            d: self.dims.d,
        }
    }

    /// ReLU feature maps, `P × F`.
    pub fn features(&self, tokens: &[usize]) -> Vec<Vec<f64>> {
        let tokens = pad_tokens(tokens, self.dims.width, self.dims.vocab);
        let pre = self.conv().forward(&tokens);
        pre.chunks(self.dims.filters.max(1))
            .map(|r| r.iter().map(|v| v.max(0.0)).collect())
            .collect()
    }
}

impl Model for HybridModel {
    fn architecture(&self) -> Architecture {
        Architecture::Hybrid
    }

    fn dims(&self) -> Dims {
        self.dims
    }

    fn logit(&self, tokens: &[usize]) -> f64 {
        let (d, f) = (self.dims.d, self.dims.filters);
        let tokens = pad_tokens(tokens, self.dims.width, self.dims.vocab);
        let pre = self.conv().forward(&tokens);
        let n = tokens.len() + 1 - self.dims.width;
        let act: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        let x = matmul(&act, n, f, &self.projection, d);
        let cache = self.projections().forward(&x, n);
        dot(&mean_pool(&cache.out, n, d), &self.head) + self.head_bias
    }

    fn backward(&self, tokens: &[usize], d_logit: f64, grad: &mut Self) {
        let (d, f) = (self.dims.d, self.dims.filters);
        let tokens = pad_tokens(tokens, self.dims.width, self.dims.vocab);
        let conv = self.conv();
        let pre = conv.forward(&tokens);
        let n = tokens.len() + 1 - self.dims.width;
        let act: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        let x = matmul(&act, n, f, &self.projection, d);
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
        add_at_b(&mut grad.projection, &act, n, f, &d_x, d);
        let d_act = matmul_bt(&d_x, n, d, &self.projection, f);
        conv.backward(
            &tokens,
            &pre,
            &d_act,
            &mut grad.embedding,
            &mut grad.conv_filters,
        );
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(
            self.dims.vocab,
            self.dims.d,
            self.dims.filters,
            self.dims.width,
        )
    }

    fn params(&self) -> Vec<&[f64]> {
        vec![
            &self.embedding,
            &self.conv_filters,
            &self.projection,
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
            &mut self.conv_filters,
            &mut self.projection,
            &mut self.query,
            &mut self.key,
            &mut self.value,
            &mut self.head,
            std::slice::from_mut(&mut self.head_bias),
        ]
    }
}
