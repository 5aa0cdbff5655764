use std::collections::HashSet;
use std::path::Path;

use super::geometry::{MapRegion, Point};
use crate::error::{Error, Result};

pub type AnchorId = u32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub id: AnchorId,
    pub position: Point,
}

/// Ordered set of ranging anchors. Order defines the index used by
/// scheduling actions.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorLayout {
    anchors: Vec<Anchor>,
}

impl AnchorLayout {
    pub fn new(anchors: Vec<Anchor>) -> Result<Self> {
        if anchors.len() < 3 {
            return Err(Error::Geometry(format!("a layout needs at least 3 anchors, got {}", anchors.len())));
        }
        let mut seen = HashSet::new();
        for a in &anchors {
            if !seen.insert(a.id) {
                return Err(Error::Geometry(format!("duplicate anchor id {}", a.id)));
            }
            if !a.position.iter().all(|c| c.is_finite()) {
                return Err(Error::Geometry(format!("anchor {} has a non-finite position", a.id)));
            }
        }
        Ok(Self { anchors })
    }

    /// Builds a layout and checks every anchor lies inside `map`.
    pub fn within(anchors: Vec<Anchor>, map: &MapRegion) -> Result<Self> {
        let layout = Self::new(anchors)?;
        if let Some(a) = layout.anchors.iter().find(|a| !map.contains(a.position)) {
            return Err(Error::Geometry(format!("anchor {} at {:?} is outside the map", a.id, a.position)));
        }
        Ok(layout)
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn ids(&self) -> Vec<AnchorId> {
        self.anchors.iter().map(|a| a.id).collect()
    }

    pub fn positions(&self) -> Vec<Point> {
        self.anchors.iter().map(|a| a.position).collect()
    }

    pub fn get(&self, id: AnchorId) -> Option<&Anchor> {
        self.anchors.iter().find(|a| a.id == id)
    }

    pub fn index_of(&self, id: AnchorId) -> Option<usize> {
        self.anchors.iter().position(|a| a.id == id)
    }

    /// Sub-layout with the given ids, in the given order.
    pub fn select(&self, ids: &[AnchorId]) -> Result<Self> {
        let anchors = ids
            .iter()
            .map(|id| self.get(*id).copied().ok_or_else(|| Error::Geometry(format!("unknown anchor id {id}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(anchors)
    }

    /// Union of two layouts (ids of `self` first, then new ids of `other`).
    pub fn union(&self, other: &AnchorLayout) -> Result<Self> {
        let mut anchors = self.anchors.clone();
        for a in &other.anchors {
            if self.get(a.id).is_none() {
                anchors.push(*a);
            }
        }
        Self::new(anchors)
    }

    /// Eight anchors on the residential floor: ids 1–3 are the bootstrap
    /// set, ids 4–8 the deployment to be imagined.
    pub fn residential_default() -> Self {
        let a = |id, x, y| Anchor { id, position: [x, y] };
        Self::new(vec![
            a(1, 0.2, 6.3),
            a(2, 9.0, 7.2),
            a(3, 4.6, 11.9),
            a(4, 0.2, 0.2),
            a(5, 4.4, 0.3),
            a(6, 9.0, 0.2),
            a(7, 8.9, 11.9),
            a(8, 0.3, 11.8),
        ])
        .expect("valid default layout")
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["anchor_id", "x", "y"] {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("expected header `anchor_id,x,y`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let mut anchors = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let bad = |msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
            if rec.len() != 3 {
                return Err(bad(format!("expected 3 fields, found {}", rec.len())));
            }
            let id = rec[0].parse::<AnchorId>().map_err(|e| bad(format!("anchor_id: {e}")))?;
            let x = rec[1].parse::<f64>().map_err(|e| bad(format!("x: {e}")))?;
            let y = rec[2].parse::<f64>().map_err(|e| bad(format!("y: {e}")))?;
            anchors.push(Anchor { id, position: [x, y] });
        }
        Self::new(anchors)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("anchor_id,x,y\n");
        for a in &self.anchors {
            out.push_str(&format!("{},{},{}\n", a.id, a.position[0], a.position[1]));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_or_duplicate_layouts() {
        let a = |id| Anchor { id, position: [0.0, 0.0] };
        assert!(AnchorLayout::new(vec![a(1), a(2)]).is_err());
        assert!(AnchorLayout::new(vec![a(1), a(2), a(2)]).is_err());
        assert!(AnchorLayout::new(vec![a(1), a(2), a(3)]).is_ok());
    }

    #[test]
    fn default_layout_is_inside_default_map() {
        let map = MapRegion::residential_floor();
        let l = AnchorLayout::residential_default();
        assert!(AnchorLayout::within(l.anchors().to_vec(), &map).is_ok());
        assert!(AnchorLayout::within(vec![Anchor { id: 9, position: [20.0, 1.0] }, l.anchors()[0], l.anchors()[1]], &map).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("anchors.csv");
        let l = AnchorLayout::residential_default();
        l.save_csv(&p).unwrap();
        assert_eq!(AnchorLayout::load_csv(&p).unwrap(), l);
    }
}
