//! Hyperparameters for the five model families and their search ranges.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const LR_C: [f64; 4] = [0.01, 0.1, 1.0, 10.0];

pub const NN_HIDDEN_UNITS: [usize; 4] = [16, 32, 64, 128];
pub const NN_LAYERS: [usize; 3] = [1, 2, 3];
pub const NN_ACTIVATIONS: [Activation; 3] = [Activation::Relu, Activation::Selu, Activation::Elu];
pub const NN_BATCH_SIZE: [usize; 4] = [16, 32, 64, 128];
pub const NN_L2: [f64; 3] = [0.0, 0.00001, 0.0001];
pub const NN_LEARNING_RATE: [f64; 2] = [0.003, 0.03];
/// Dropout is continuous and uniform on this open interval.
pub const NN_DROPOUT: (f64, f64) = (0.0, 0.25);

pub const RF_MAX_DEPTH: [usize; 3] = [3, 4, 5];
pub const RF_N_TREES: [usize; 4] = [32, 64, 128, 256];

pub const SVM_C: [f64; 4] = [0.01, 0.1, 1.0, 10.0];
pub const SVM_KERNELS: [Kernel; 3] = [Kernel::Polynomial, Kernel::Rbf, Kernel::Sigmoid];
pub const SVM_DEGREE: [u32; 3] = [3, 5, 7];

pub const XGB_SUBSAMPLE: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
pub const XGB_MAX_DEPTH: [usize; 7] = [2, 3, 4, 5, 6, 7, 8];
pub const XGB_GAMMA: [f64; 4] = [0.0, 0.1, 1.0, 10.0];
pub const XGB_LEARNING_RATE: [f64; 4] = [0.003, 0.03, 0.3, 0.5];
pub const XGB_L1: [f64; 4] = [1.0, 0.1, 0.001, 0.0];
pub const XGB_L2: [f64; 4] = [1.0, 0.1, 0.001, 0.0];
pub const XGB_ROUNDS: [usize; 4] = [5, 10, 15, 20];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Lr,
    Nn,
    Rf,
    Svm,
    Xgb,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Lr, Family::Nn, Family::Rf, Family::Svm, Family::Xgb];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Lr => "lr",
            Family::Nn => "nn",
            Family::Rf => "rf",
            Family::Svm => "svm",
            Family::Xgb => "xgb",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Family::Lr => "LR",
            Family::Nn => "NN",
            Family::Rf => "RF",
            Family::Svm => "SVM",
            Family::Xgb => "XGB",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown model family `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Selu,
    Elu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Polynomial,
    Rbf,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrParams {
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NnParams {
    pub hidden_units: usize,
    pub layers: usize,
    pub activation: Activation,
    pub batch_size: usize,
    pub l2: f64,
    pub learning_rate: f64,
    pub dropout: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfParams {
    pub max_depth: usize,
    pub n_trees: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub kernel: Kernel,
    pub degree: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XgbParams {
    pub subsample: f64,
    pub max_depth: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub l1: f64,
    pub l2: f64,
    pub n_rounds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Hyperparams {
    Lr(LrParams),
    Nn(NnParams),
    Rf(RfParams),
    Svm(SvmParams),
    Xgb(XgbParams),
}

fn check<T: PartialEq + fmt::Debug>(name: &str, value: T, allowed: &[T], errors: &mut Vec<String>) {
    if !allowed.contains(&value) {
        errors.push(format!("{name} = {value:?} not in {allowed:?}"));
    }
}

impl Hyperparams {
    pub fn family(&self) -> Family {
        match self {
            Hyperparams::Lr(_) => Family::Lr,
            Hyperparams::Nn(_) => Family::Nn,
            Hyperparams::Rf(_) => Family::Rf,
            Hyperparams::Svm(_) => Family::Svm,
            Hyperparams::Xgb(_) => Family::Xgb,
        }
    }

    /// Check every value against its allowed choice set or interval.
    pub fn validate(&self) -> Result<(), String> {
        let mut e = Vec::new();
        match self {
            Hyperparams::Lr(p) => check("C", p.c, &LR_C, &mut e),
            Hyperparams::Nn(p) => {
                check("hidden_units", p.hidden_units, &NN_HIDDEN_UNITS, &mut e);
                check("layers", p.layers, &NN_LAYERS, &mut e);
                check("activation", p.activation, &NN_ACTIVATIONS, &mut e);
                check("batch_size", p.batch_size, &NN_BATCH_SIZE, &mut e);
                check("l2", p.l2, &NN_L2, &mut e);
                check("learning_rate", p.learning_rate, &NN_LEARNING_RATE, &mut e);
                if !(p.dropout >= NN_DROPOUT.0 && p.dropout < NN_DROPOUT.1) {
                    e.push(format!("dropout = {} outside [0, 0.25)", p.dropout));
                }
            }
            Hyperparams::Rf(p) => {
                check("max_depth", p.max_depth, &RF_MAX_DEPTH, &mut e);
                check("n_trees", p.n_trees, &RF_N_TREES, &mut e);
            }
            Hyperparams::Svm(p) => {
                check("C", p.c, &SVM_C, &mut e);
                check("kernel", p.kernel, &SVM_KERNELS, &mut e);
                check("degree", p.degree, &SVM_DEGREE, &mut e);
            }
            Hyperparams::Xgb(p) => {
                check("subsample", p.subsample, &XGB_SUBSAMPLE, &mut e);
                check("max_depth", p.max_depth, &XGB_MAX_DEPTH, &mut e);
                check("gamma", p.gamma, &XGB_GAMMA, &mut e);
                check("learning_rate", p.learning_rate, &XGB_LEARNING_RATE, &mut e);
                check("l1", p.l1, &XGB_L1, &mut e);
                check("l2", p.l2, &XGB_L2, &mut e);
                check("n_rounds", p.n_rounds, &XGB_ROUNDS, &mut e);
            }
        }
        if e.is_empty() {
            Ok(())
        } else {
            Err(e.join("; "))
        }
    }

    /// Flat name → value view used by the search ledger.
    pub fn to_map(&self) -> BTreeMap<&'static str, String> {
        let mut m = BTreeMap::new();
        match self {
            Hyperparams::Lr(p) => {
                m.insert("C", p.c.to_string());
            }
            Hyperparams::Nn(p) => {
                m.insert("hidden_units", p.hidden_units.to_string());
                m.insert("layers", p.layers.to_string());
                m.insert("activation", format!("{:?}", p.activation).to_lowercase());
                m.insert("batch_size", p.batch_size.to_string());
                m.insert("l2", p.l2.to_string());
                m.insert("learning_rate", p.learning_rate.to_string());
                m.insert("dropout", p.dropout.to_string());
            }
            Hyperparams::Rf(p) => {
                m.insert("max_depth", p.max_depth.to_string());
                m.insert("n_trees", p.n_trees.to_string());
            }
            Hyperparams::Svm(p) => {
                m.insert("C", p.c.to_string());
                m.insert("kernel", format!("{:?}", p.kernel).to_lowercase());
                m.insert("degree", p.degree.to_string());
            }
            Hyperparams::Xgb(p) => {
                m.insert("subsample", p.subsample.to_string());
                m.insert("max_depth", p.max_depth.to_string());
                m.insert("gamma", p.gamma.to_string());
                m.insert("learning_rate", p.learning_rate.to_string());
                m.insert("l1", p.l1.to_string());
                m.insert("l2", p.l2.to_string());
                m.insert("n_rounds", p.n_rounds.to_string());
            }
        }
        m
    }

    pub fn describe(&self) -> String {
        self.to_map()
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_catches_out_of_range() {
        assert!(Hyperparams::Lr(LrParams { c: 1.0 }).validate().is_ok());
        assert!(Hyperparams::Lr(LrParams { c: 2.0 }).validate().is_err());
        let nn = NnParams {
            hidden_units: 16,
            layers: 1,
            activation: Activation::Elu,
            batch_size: 32,
            l2: 0.0,
            learning_rate: 0.003,
            dropout: 0.3,
        };
        assert!(Hyperparams::Nn(nn).validate().is_err());
        assert!(Hyperparams::Nn(NnParams { dropout: 0.1, ..nn })
            .validate()
            .is_ok());
    }

    #[test]
    fn family_parses_case_insensitively() {
        assert_eq!("XGB".parse::<Family>().unwrap(), Family::Xgb);
        assert!("gbm".parse::<Family>().is_err());
    }
}
