use std::ops::Range;

use crate::nn::Network;
use crate::scalar::Scalar;

/// A prunable unit: one output channel of a conv or dense layer, covering
/// its fan-in weights and its bias.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub id: usize,
    pub layer_index: usize,
    pub channel_index: usize,
    pub parameter_range: Range<usize>,
}

impl Component {
    pub fn parameter_count(&self) -> usize {
        self.parameter_range.len()
    }
}

/// One component per output channel of every parameterized layer except
/// the final classifier, ordered by (layer, channel).
pub fn enumerate_components<T: Scalar>(net: &Network<T>) -> Vec<Component> {
    let index = net.parameter_index();
    let classifier = net.classifier_layer();
    let mut out = Vec::new();
    for slot in index.slots() {
        if Some(slot.layer) == classifier {
            continue;
        }
        for channel in 0..slot.channels {
            out.push(Component {
                id: out.len(),
                layer_index: slot.layer,
                channel_index: channel,
                parameter_range: slot.channel_range(channel),
            });
        }
    }
    out
}
