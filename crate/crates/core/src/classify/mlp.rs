use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{read_tensor_file, write_tensor_file};
use crate::error::{Error, Result};
use crate::ndcore::rng::named_rng;
use crate::ndcore::tensor::affine_forward;
use crate::ndcore::{Linear, ParamStore, Real, Tape, Tensor, Var};

/// Fully connected relu network. The last hidden layer is the feature layer.
#[derive(Clone, Debug)]
pub struct Mlp<T: Real = f32> {
    pub sizes: Vec<usize>,
    pub params: ParamStore<T>,
    layers: Vec<Linear>,
    /// Optimizer steps applied so far; zero means untrained.
    pub steps_trained: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct MlpMeta {
    sizes: Vec<usize>,
    param_names: Vec<String>,
    steps_trained: u64,
}

impl<T: Real> Mlp<T> {
    /// `sizes = [input, hidden…, output]`, at least one hidden layer.
    pub fn new(sizes: &[usize], seed: u64, name: &str) -> Result<Self> {
        if sizes.len() < 3 || sizes.contains(&0) {
            return Err(Error::validation(format!(
                "MLP needs input, at least one hidden and an output size, all positive; got {sizes:?}"
            )));
        }
        let mut rng = named_rng(seed, name);
        let mut params = ParamStore::new();
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::init(&mut params, &format!("layer{i}"), w[0], w[1], &mut rng))
            .collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
            layers,
            steps_trained: 0,
        })
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            sizes: self.sizes.clone(),
            params: self.params.cast(),
            layers: self.layers.clone(),
            steps_trained: self.steps_trained,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn feature_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 2]
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, d) = x.check_2d("mlp input")?;
        if d != self.input_dim() {
            return Err(Error::dim(format!("MLP expects {} inputs, got {d}", self.input_dim())));
        }
        Ok(())
    }

    /// Returns `(features, outputs)`.
    pub fn forward_on_tape(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<(Var, Var)> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for layer in &self.layers[..last] {
            let a = layer.forward(tape, vars, h)?;
            h = tape.relu(a);
        }
        let out = self.layers[last].forward(tape, vars, h)?;
        Ok((h, out))
    }

    fn run(&self, x: &Tensor<T>, upto: usize) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (i, layer) in self.layers[..upto].iter().enumerate() {
            h = affine_forward(&h, self.params.get(layer.w), self.params.get(layer.b))?;
            if i + 1 < self.layers.len() {
                for v in h.data_mut() {
                    if *v <= T::zero() {
                        *v = T::zero();
                    }
                }
            }
        }
        Ok(h)
    }

    /// Outputs (logits or regression values), `[n, output]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(x, self.layers.len())
    }

    /// Last hidden-layer activations, `[n, feature_dim]`.
    pub fn features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(x, self.layers.len() - 1)
    }
}

impl Mlp<f32> {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, t) in self.params.iter() {
            write_tensor_file(&dir.join(format!("{name}.gint")), t)?;
        }
        let meta = MlpMeta {
            sizes: self.sizes.clone(),
            param_names: self.params.names().to_vec(),
            steps_trained: self.steps_trained,
        };
        let path = dir.join("meta.json");
        fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("meta.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: MlpMeta = serde_json::from_str(&text)?;
        let mut mlp = Mlp::<f32>::new(&meta.sizes, 0, "load")?;
        if mlp.params.names() != meta.param_names.as_slice() {
            return Err(Error::Format(format!("{} lists unexpected parameters", path.display())));
        }
        for i in 0..mlp.params.len() {
            let name = mlp.params.name(i).to_string();
            mlp.params.set(i, read_tensor_file(&dir.join(format!("{name}.gint")))?)?;
        }
        mlp.steps_trained = meta.steps_trained;
        Ok(mlp)
    }
}
