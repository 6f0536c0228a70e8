use std::collections::VecDeque;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::featstore::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    #[default]
    #[serde(rename = "4")]
    Four,
    #[serde(rename = "8")]
    Eight,
}

impl FromStr for Connectivity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "4" => Ok(Connectivity::Four),
            "8" => Ok(Connectivity::Eight),
            other => Err(format!("connectivity must be 4 or 8, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxPolicy {
    /// Box of the component with the most pixels.
    #[default]
    Largest,
    /// Every component's box, largest box area first.
    All,
}

impl FromStr for BoxPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "largest" => Ok(BoxPolicy::Largest),
            "all" => Ok(BoxPolicy::All),
            other => Err(format!("policy must be largest or all, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    pub bbox: BBox,
    pub pixel_count: u64,
}

const N4: [(isize, isize); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];
const N8: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Labels foreground components by breadth-first flood fill, in raster order
/// of each component's first pixel.
pub fn connected_components(
    mask: &[bool],
    width: usize,
    height: usize,
    connectivity: Connectivity,
) -> Vec<Component> {
    assert_eq!(mask.len(), width * height, "mask size");
    let offsets: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &N4,
        Connectivity::Eight => &N8,
    };
    let mut seen = vec![false; mask.len()];
    let mut queue = VecDeque::new();
    let mut out = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut count = 0u64;
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % width, i / width);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            count += 1;
            for &(dx, dy) in offsets {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                    continue;
                }
                let j = ny as usize * width + nx as usize;
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        out.push(Component {
            bbox: BBox::new(x0 as u32, y0 as u32, x1 as u32 + 1, y1 as u32 + 1),
            pixel_count: count,
        });
    }
    out
}

/// Index of the component with the most pixels; ties go to the smaller
/// top-left corner compared as `(x0, y0)`.
pub fn largest_component(components: &[Component]) -> Option<usize> {
    (0..components.len()).min_by(|&a, &b| {
        let (ca, cb) = (&components[a], &components[b]);
        cb.pixel_count
            .cmp(&ca.pixel_count)
            .then((ca.bbox.x0, ca.bbox.y0).cmp(&(cb.bbox.x0, cb.bbox.y0)))
    })
}

/// Boxes sorted by box area descending, ties by coordinates.
pub fn sorted_boxes(components: &[Component]) -> Vec<BBox> {
    let mut boxes: Vec<BBox> = components.iter().map(|c| c.bbox).collect();
    boxes.sort_by(|a, b| b.area().cmp(&a.area()).then(a.cmp(b)));
    boxes
}

/// Tight half-open boxes of the mask's connected components. An empty mask
/// yields an empty list.
pub fn boxes_from_mask(
    mask: &[bool],
    width: usize,
    height: usize,
    connectivity: Connectivity,
    policy: BoxPolicy,
) -> Vec<BBox> {
    let comps = connected_components(mask, width, height, connectivity);
    match policy {
        BoxPolicy::Largest => largest_component(&comps)
            .map(|i| vec![comps[i].bbox])
            .unwrap_or_default(),
        BoxPolicy::All => sorted_boxes(&comps),
    }
}
