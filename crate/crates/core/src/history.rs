//! Observable and joint histories.

use serde::{Deserialize, Serialize};

use crate::error::{DimgError, Result};
use crate::model::PomdpModel;

/// `h_n = (x_0, a_0, x_1, …, a_{n−1}, x_n)`.
///
/// Stored as the state sequence and the action sequence; `states` is always
/// one longer than `actions`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObsHistory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

impl ObsHistory {
    pub fn initial(x0: usize) -> Self {
        ObsHistory {
            states: vec![x0],
            actions: Vec::new(),
        }
    }

    pub fn new(states: Vec<usize>, actions: Vec<usize>) -> Result<Self> {
        if states.len() != actions.len() + 1 {
            return Err(DimgError::domain(format!(
                "history with {} states needs {} actions, got {}",
                states.len(),
                states.len().saturating_sub(1),
                actions.len()
            )));
        }
        Ok(ObsHistory { states, actions })
    }

    /// Stage index `n` of `h_n`.
    pub fn stage(&self) -> usize {
        self.actions.len()
    }

    pub fn last_state(&self) -> usize {
        *self.states.last().expect("history has at least one state")
    }

    pub fn extended(&self, a: usize, x_next: usize) -> Self {
        let mut h = self.clone();
        h.actions.push(a);
        h.states.push(x_next);
        h
    }

    /// Check index ranges and `a_k ∈ D(x_k)`.
    pub fn check(&self, model: &PomdpModel) -> Result<()> {
        if self.states.len() != self.actions.len() + 1 {
            return Err(DimgError::domain("states and actions do not alternate"));
        }
        if let Some(&x) = self.states.iter().find(|&&x| x >= model.nx()) {
            return Err(DimgError::domain(format!("observable state {x} out of range")));
        }
        for (&x, &a) in self.states.iter().zip(&self.actions) {
            model.require_feasible(x, a)?;
        }
        Ok(())
    }
}

/// The manipulator's conditioning history `(x_0, y_0, a_0, …, x_{n−1}, y_{n−1}, a_{n−1})`.
///
/// A history of length `n` conditions the stage-`n` design; the empty
/// history conditions stage 0.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JointHistory {
    pub states: Vec<usize>,
    pub hidden: Vec<usize>,
    pub actions: Vec<usize>,
}

impl JointHistory {
    pub fn empty() -> Self {
        JointHistory::default()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// The last realized tuple `(x, y, a)`, if any.
    pub fn last(&self) -> Option<(usize, usize, usize)> {
        let n = self.len();
        (n > 0).then(|| (self.states[n - 1], self.hidden[n - 1], self.actions[n - 1]))
    }

    pub fn extended(&self, x: usize, y: usize, a: usize) -> Self {
        let mut h = self.clone();
        h.states.push(x);
        h.hidden.push(y);
        h.actions.push(a);
        h
    }

    /// The decision maker's view once `x_n` is revealed: `(x_0, a_0, …, x_n)`.
    pub fn observable_with(&self, x_now: usize) -> ObsHistory {
        let mut states = self.states.clone();
        states.push(x_now);
        ObsHistory {
            states,
            actions: self.actions.clone(),
        }
    }

    /// Compact text form used in exported files, e.g. `x0,y1,a0|x1,y0,a1`.
    pub fn key(&self) -> String {
        (0..self.len())
            .map(|k| format!("{},{},{}", self.states[k], self.hidden[k], self.actions[k]))
            .collect::<Vec<_>>()
            .join("|")
    }
}

impl ObsHistory {
    /// Compact text form `x0 a0 x1 …`.
    pub fn key(&self) -> String {
        let mut parts = Vec::with_capacity(self.states.len() * 2);
        for (k, x) in self.states.iter().enumerate() {
            if k > 0 {
                parts.push(format!("a{}", self.actions[k - 1]));
            }
            parts.push(format!("x{x}"));
        }
        parts.join(" ")
    }
}
