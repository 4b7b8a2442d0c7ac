//! Convolutional sensitivity classifier.
//!
//! embed → 1-D valid convolution (width `w`, no bias) → ReLU → max-pool over
//! positions → linear → logistic.

use rand::Rng;

use super::{pad_tokens, Architecture, Dims, Model};

#[derive(Clone, Debug, PartialEq)]
pub struct CnnModel {
    pub dims: Dims,
    /// `V × d`
    pub embedding: Vec<f64>,
    /// `F × w × d`
    pub conv_filters: Vec<f64>,
    /// `F`
    pub fc_weights: Vec<f64>,
    pub fc_bias: f64,
}

/// Borrowed embedding + filter bank, shared with the hybrid model.
#[derive(Clone, Copy)]
pub(crate) struct Conv<'a> {
    pub embedding: &'a [f64],
    pub filters: &'a [f64],
    pub d: usize,
    pub f: usize,
    pub w: usize,
}

impl Conv<'_> {
    /// Pre-activations, `P × F`, over already padded tokens.
    pub fn forward(&self, tokens: &[usize]) -> Vec<f64> {
        let (d, f, w) = (self.d, self.f, self.w);
        let positions = tokens.len() + 1 - w;
        let mut pre = vec![0.0; positions * f];
        for p in 0..positions {
            for fi in 0..f {
                let mut acc = 0.0;
                for k in 0..w {
                    let e = &self.embedding[tokens[p + k] * d..(tokens[p + k] + 1) * d];
                    let filt = &self.filters[(fi * w + k) * d..(fi * w + k + 1) * d];
                    acc += super::linalg::dot(e, filt);
                }
                pre[p * f + fi] = acc;
            }
        }
        pre
    }

    /// Back-propagates `d_act` (gradient w.r.t. post-ReLU maps) into the
    /// embedding and filter gradients.
    pub fn backward(
        &self,
        tokens: &[usize],
        pre: &[f64],
        d_act: &[f64],
        d_embedding: &mut [f64],
        d_filters: &mut [f64],
    ) {
        let (d, f, w) = (self.d, self.f, self.w);
        let positions = pre.len() / f;
        for p in 0..positions {
            for fi in 0..f {
                let g = d_act[p * f + fi];
                if g == 0.0 || pre[p * f + fi] <= 0.0 {
                    continue;
                }
                for k in 0..w {
                    let t = tokens[p + k];
                    let fo = (fi * w + k) * d;
                    for j in 0..d {
                        d_filters[fo + j] += g * self.embedding[t * d + j];
                        d_embedding[t * d + j] += g * self.filters[fo + j];
                    }
                }
            }
        }
    }
}

impl CnnModel {
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
            fc_weights: vec![0.0; filters],
            fc_bias: 0.0,
        }
    }

    pub fn random<R: Rng>(
        vocab: usize,
        d: usize,
        filters: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        let mut m = Self::zeros(vocab, d, filters, width);
        let conv_scale = 1.0 / ((m.dims.width * d) as f64).sqrt();
        let fc_scale = 1.0 / (filters as f64).sqrt();
        let es = super::EMBED_INIT_SCALE;
        m.embedding
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-es..es));
        m.conv_filters
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-conv_scale..conv_scale));
        m.fc_weights
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-fc_scale..fc_scale));
        m
    }

    pub(crate) fn conv(&self) -> Conv<'_> {
        Conv {
            embedding: &self.embedding,
            filters: &self.conv_filters,
            d: self.dims.d,
            f: self.dims.filters,
            w: self.dims.width,
        }
    }

    /// Max-pooled ReLU features and, per filter, the winning position.
    fn pooled(&self, pre: &[f64]) -> (Vec<f64>, Vec<usize>) {
        let f = self.dims.filters;
        let positions = pre.len() / f.max(1);
        let mut pooled = vec![0.0; f];
        let mut arg = vec![0; f];
        for fi in 0..f {
            let mut best = f64::NEG_INFINITY;
            for p in 0..positions {
                let v = pre[p * f + fi].max(0.0);
                if v > best {
                    best = v;
                    arg[fi] = p;
                }
            }
            pooled[fi] = best;
        }
        (pooled, arg)
    }
}

impl Model for CnnModel {
    fn architecture(&self) -> Architecture {
        Architecture::Cnn
    }

    fn dims(&self) -> Dims {
        self.dims
    }

    fn logit(&self, tokens: &[usize]) -> f64 {
        let tokens = pad_tokens(tokens, self.dims.width, self.dims.vocab);
        let pre = self.conv().forward(&tokens);
        let (pooled, _) = self.pooled(&pre);
        super::linalg::dot(&pooled, &self.fc_weights) + self.fc_bias
    }

    fn backward(&self, tokens: &[usize], d_logit: f64, grad: &mut Self) {
        let tokens = pad_tokens(tokens, self.dims.width, self.dims.vocab);
        let conv = self.conv();
        let pre = conv.forward(&tokens);
        let (pooled, arg) = self.pooled(&pre);
        grad.fc_bias += d_logit;
        let f = self.dims.filters;
        let mut d_act = vec![0.0; pre.len()];
        for fi in 0..f {
            grad.fc_weights[fi] += d_logit * pooled[fi];
            d_act[arg[fi] * f + fi] = d_logit * self.fc_weights[fi];
        }
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
            &self.fc_weights,
            std::slice::from_ref(&self.fc_bias),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.embedding,
            &mut self.conv_filters,
            &mut self.fc_weights,
            std::slice::from_mut(&mut self.fc_bias),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_scores_half() {
        let m = CnnModel::zeros(10, 4, 3, 2);
        assert_eq!(m.score(&[1, 2, 3]), 0.5);
        assert_eq!(m.score(&[]), 0.5);
    }

    #[test]
    fn hand_computed_single_filter() {
        // V=4, d=2, F=1, w=2; tokens [1, 2, 3]
        let mut m = CnnModel::zeros(4, 2, 1, 2);
        m.embedding = vec![0.0, 0.0, 1.0, 2.0, -1.0, 0.5, 3.0, -2.0];
        m.conv_filters = vec![0.5, -1.0, 2.0, 1.0];
        m.fc_weights = vec![1.5];
        m.fc_bias = -0.25;
        // p0: e1·f0 + e2·f1 = (0.5 - 2) + (-2 + 0.5) = -3.0 -> relu 0
        // p1: e2·f0 + e3·f1 = (-0.5 - 0.5) + (6 - 2) = 3.0
        let pooled = 3.0f64;
        let z = 1.5 * pooled - 0.25;
        let expected = 1.0 / (1.0 + (-z).exp());
        assert!((m.score(&[1, 2, 3]) - expected).abs() < 1e-9);
    }

    #[test]
    fn short_input_is_padded_with_unknown() {
        let mut rng = rand::thread_rng();
        let m = CnnModel::random(6, 3, 2, 3, &mut rng);
        assert_eq!(m.score(&[4]), m.score(&[4, 0, 0]));
        assert_eq!(m.score(&[]), m.score(&[0, 0, 0]));
        // Out-of-vocabulary indices map to unknown.
        assert_eq!(m.score(&[99, 4, 2]), m.score(&[0, 4, 2]));
    }

    #[test]
    fn filter_permutation_symmetry() {
        let mut rng = rand::thread_rng();
        let m = CnnModel::random(8, 3, 3, 2, &mut rng);
        let mut p = m.clone();
        let block = 2 * 3;
        let order = [2usize, 0, 1];
        for (dst, &src) in order.iter().enumerate() {
            p.conv_filters[dst * block..(dst + 1) * block]
                .copy_from_slice(&m.conv_filters[src * block..(src + 1) * block]);
            p.fc_weights[dst] = m.fc_weights[src];
        }
        let toks = [1, 5, 7, 2, 3];
        assert!((m.score(&toks) - p.score(&toks)).abs() < 1e-12);
    }
}
