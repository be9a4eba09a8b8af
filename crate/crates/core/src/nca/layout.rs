use serde::{Deserialize, Serialize};

use super::NcaError;

/// Channel partition of a cell state.
///
/// Channels are stored in the order fixed-input, visible, hidden,
/// classification, condition. Visible, hidden and classification channels
/// form one contiguous evolving block that the update module writes.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelLayout {
    #[serde(default)]
    pub fixed_input: usize,
    #[serde(default)]
    pub visible: usize,
    #[serde(default)]
    pub hidden: usize,
    #[serde(default)]
    pub classes: usize,
    #[serde(default)]
    pub condition: usize,
    /// Index of the alpha channel within the visible channels.
    #[serde(default)]
    pub alpha_index: Option<usize>,
}

impl ChannelLayout {
    pub fn rgba(hidden: usize) -> Self {
        Self {
            fixed_input: 0,
            visible: 4,
            hidden,
            classes: 0,
            condition: 0,
            alpha_index: Some(3),
        }
    }

    pub fn validate(&self) -> Result<(), NcaError> {
        if let Some(a) = self.alpha_index {
            if a >= self.visible {
                return Err(NcaError::Layout(format!(
                    "alpha index {a} does not address one of {} visible channels",
                    self.visible
                )));
            }
        }
        if self.evolving() == 0 {
            return Err(NcaError::Layout("layout has no evolving channels".into()));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.fixed_input + self.visible + self.hidden + self.classes + self.condition
    }

    /// Channels written by the update module.
    pub fn evolving(&self) -> usize {
        self.visible + self.hidden + self.classes
    }

    pub fn evolving_start(&self) -> usize {
        self.fixed_input
    }

    pub fn visible_start(&self) -> usize {
        self.fixed_input
    }

    pub fn hidden_start(&self) -> usize {
        self.fixed_input + self.visible
    }

    pub fn class_start(&self) -> usize {
        self.hidden_start() + self.hidden
    }

    pub fn condition_start(&self) -> usize {
        self.class_start() + self.classes
    }

    /// Absolute channel index of alpha.
    pub fn alpha_channel(&self) -> Option<usize> {
        self.alpha_index.map(|a| self.visible_start() + a)
    }

    pub fn is_evolving(&self, channel: usize) -> bool {
        (self.evolving_start()..self.evolving_start() + self.evolving()).contains(&channel)
    }
}
