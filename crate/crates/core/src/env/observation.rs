use std::collections::BTreeMap;

use super::geometry::Point;
use super::layout::{AnchorId, AnchorLayout};
use crate::error::{Error, Result};
use crate::scheduler::SchedulingAction;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub anchor_id: AnchorId,
    pub distance: f64,
    pub anchor: Point,
}

/// Range readings of the active anchors at one step. Consumers must not
/// depend on the order of the pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationSet {
    pub pairs: Vec<Observation>,
}

impl ObservationSet {
    pub fn new(pairs: Vec<Observation>) -> Self {
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn anchor_ids(&self) -> Vec<AnchorId> {
        self.pairs.iter().map(|o| o.anchor_id).collect()
    }

    /// Every reading of the step for anchors in `layout`.
    pub fn all(measurements: &BTreeMap<AnchorId, f64>, layout: &AnchorLayout) -> Self {
        let pairs = layout
            .anchors()
            .iter()
            .filter_map(|a| measurements.get(&a.id).map(|&d| Observation { anchor_id: a.id, distance: d, anchor: a.position }))
            .collect();
        Self { pairs }
    }
}

/// Selected readings plus the number of selected anchors with no reading.
#[derive(Debug, Clone, PartialEq)]
pub struct Masked {
    pub set: ObservationSet,
    pub missing: usize,
}

/// `(d, p)` pairs of the anchors switched on by `action` that have a reading.
pub fn mask_observations(
    measurements: &BTreeMap<AnchorId, f64>,
    layout: &AnchorLayout,
    action: &SchedulingAction,
) -> Result<Masked> {
    if action.len() != layout.len() {
        return Err(Error::contract(format!(
            "action over {} anchors for a layout of {}",
            action.len(),
            layout.len()
        )));
    }
    let mut pairs = Vec::new();
    let mut missing = 0;
    for (a, on) in layout.anchors().iter().zip(action.alpha()) {
        if !on {
            continue;
        }
        match measurements.get(&a.id) {
            Some(&d) => pairs.push(Observation { anchor_id: a.id, distance: d, anchor: a.position }),
            None => missing += 1,
        }
    }
    Ok(Masked { set: ObservationSet { pairs }, missing })
}
