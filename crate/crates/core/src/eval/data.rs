//! Synthetic classification data (Gaussian clusters).

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::container::{Container, Role, Tensor};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub dim: usize,
    pub classes: usize,
    /// Gaussian modes per class.
    pub modes: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Std-dev of mode centers per coordinate.
    pub spread: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            dim: 16,
            classes: 4,
            modes: 2,
            n_train: 2000,
            n_test: 500,
            spread: 0.8,
            noise: 1.0,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub classes: usize,
    pub train_x: Vec<f32>,
    pub train_y: Vec<u32>,
    pub test_x: Vec<f32>,
    pub test_y: Vec<u32>,
}

impl Dataset {
    pub fn gaussian_clusters(cfg: &ClusterConfig) -> Self {
        let mut r = rng::stream(cfg.seed, 0xDA7A);
        let centers: Vec<Vec<f64>> = (0..cfg.classes * cfg.modes)
            .map(|_| {
                (0..cfg.dim)
                    .map(|_| {
                        let e: f64 = StandardNormal.sample(&mut r);
                        cfg.spread * e
                    })
                    .collect::<Vec<f64>>()
            })
            .collect();
        let draw = |n: usize, r: &mut rand_chacha::ChaCha8Rng| {
            let mut x = Vec::with_capacity(n * cfg.dim);
            let mut y = Vec::with_capacity(n);
            for i in 0..n {
                let class = i % cfg.classes;
                let mode = r.random_range(0..cfg.modes);
                let c = &centers[class * cfg.modes + mode];
                for &cv in c {
                    let e: f64 = StandardNormal.sample(r);
                    x.push((cv + cfg.noise * e) as f32);
                }
                y.push(class as u32);
            }
            (x, y)
        };
        let (train_x, train_y) = draw(cfg.n_train, &mut r);
        let (test_x, test_y) = draw(cfg.n_test, &mut r);
        Dataset {
            dim: cfg.dim,
            classes: cfg.classes,
            train_x,
            train_y,
            test_x,
            test_y,
        }
    }

    pub fn train_len(&self) -> usize {
        self.train_y.len()
    }

    pub fn test_len(&self) -> usize {
        self.test_y.len()
    }

    pub fn train_row(&self, i: usize) -> &[f32] {
        &self.train_x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn test_row(&self, i: usize) -> &[f32] {
        &self.test_x[i * self.dim..(i + 1) * self.dim]
    }

    /// Tensors 0..4 with role `Dataset`: train x `[n, d]`, train labels
    /// `[n]`, test x, test labels. Labels are stored as floats.
    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        let d = self.dim as u32;
        let labels = |y: &[u32]| y.iter().map(|&v| v as f32).collect::<Vec<f32>>();
        c.push(Tensor::f32(
            0,
            Role::Dataset,
            vec![self.train_len() as u32, d],
            self.train_x.clone(),
        ));
        c.push(Tensor::f32(
            1,
            Role::Dataset,
            vec![self.train_len() as u32],
            labels(&self.train_y),
        ));
        c.push(Tensor::f32(
            2,
            Role::Dataset,
            vec![self.test_len() as u32, d],
            self.test_x.clone(),
        ));
        c.push(Tensor::f32(
            3,
            Role::Dataset,
            vec![self.test_len() as u32],
            labels(&self.test_y),
        ));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, EvalError> {
        let get = |i: u32| {
            c.find(i, Role::Dataset)
                .ok_or_else(|| EvalError::Dataset(format!("missing dataset tensor {i}")))
        };
        let (tx, ty, vx, vy) = (get(0)?, get(1)?, get(2)?, get(3)?);
        if tx.dims.len() != 2 || vx.dims.len() != 2 || tx.dims[1] != vx.dims[1] {
            return Err(EvalError::Dataset("feature tensors must be [n, d] with equal d".into()));
        }
        if ty.dims != [tx.dims[0]] || vy.dims != [vx.dims[0]] {
            return Err(EvalError::Dataset("label counts do not match feature rows".into()));
        }
        let f = |t: &Tensor| {
            t.as_f32()
                .map(<[f32]>::to_vec)
                .ok_or_else(|| EvalError::Dataset("dataset tensors must be f32".into()))
        };
        let labels = |t: &Tensor| -> Result<Vec<u32>, EvalError> {
            f(t)?
                .into_iter()
                .map(|v| {
                    if v >= 0.0 && v.fract() == 0.0 {
                        Ok(v as u32)
                    } else {
                        Err(EvalError::Dataset(format!("bad label {v}")))
                    }
                })
                .collect()
        };
        let train_y = labels(ty)?;
        let test_y = labels(vy)?;
        let classes = train_y.iter().chain(&test_y).max().map_or(0, |&m| m as usize + 1);
        Ok(Dataset {
            dim: tx.dims[1] as usize,
            classes,
            train_x: f(tx)?,
            train_y,
            test_x: f(vx)?,
            test_y,
        })
    }

    /// Role-5 input file holding the first `n` test rows as `[n, d]`.
    pub fn inputs_container(&self, n: usize) -> Container {
        let n = n.min(self.test_len());
        let mut c = Container::new();
        c.push(Tensor::f32(
            0,
            Role::Input,
            vec![n as u32, self.dim as u32],
            self.test_x[..n * self.dim].to_vec(),
        ));
        c
    }
}
