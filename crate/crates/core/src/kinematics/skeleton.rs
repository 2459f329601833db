use std::fmt::Write as _;

use super::{KinematicsError, Vec3};

/// Number of joints in the SMPL body skeleton.
pub const SMPL_JOINTS: usize = 24;

const SMPL_TEXT: &str = include_str!("../../data/smpl_skeleton.txt");

/// Kinematic tree: parent indices and rest-pose offsets.
///
/// Joints are topologically ordered: joint 0 is the root and every other
/// joint's parent has a smaller index. `feet` names the four contact joints
/// in the order left heel, left toe, right heel, right toe.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    names: Vec<String>,
    parents: Vec<Option<usize>>,
    offsets: Vec<Vec3>,
    feet: [usize; 4],
}

impl Skeleton {
    pub fn new(
        names: Vec<String>,
        parents: &[i64],
        offsets: Vec<Vec3>,
        feet: [usize; 4],
    ) -> Result<Self, KinematicsError> {
        let n = parents.len();
        let invalid = |msg: String| Err(KinematicsError::InvalidSkeleton(msg));
        if n == 0 {
            return invalid("no joints".into());
        }
        if names.len() != n || offsets.len() != n {
            return invalid(format!(
                "{} parents, {} names, {} offsets",
                n,
                names.len(),
                offsets.len()
            ));
        }
        let roots = parents.iter().filter(|&&p| p < 0).count();
        if roots != 1 || parents[0] >= 0 {
            return invalid("joint 0 must be the only root".into());
        }
        let mut resolved = Vec::with_capacity(n);
        for (j, &p) in parents.iter().enumerate() {
            if j == 0 {
                resolved.push(None);
            } else if p < 0 || p as usize >= j {
                return invalid(format!("joint {j} has parent {p}; parents must precede children"));
            } else {
                resolved.push(Some(p as usize));
            }
        }
        if offsets.iter().any(|o| !o.iter().all(|v| v.is_finite())) {
            return invalid("non-finite rest offset".into());
        }
        if let Some(&f) = feet.iter().find(|&&f| f >= n) {
            return invalid(format!("foot joint {f} out of range"));
        }
        Ok(Self { names, parents: resolved, offsets, feet })
    }

    /// The 24-joint SMPL skeleton shipped with the crate (z-up, meters).
    pub fn smpl() -> Self {
        Self::parse(SMPL_TEXT).expect("bundled SMPL skeleton is valid")
    }

    /// Serial chain: joint `j` hangs off joint `j-1` at `offsets[j]`.
    /// All four foot slots point at the last joint unless overridden.
    pub fn chain(offsets: &[Vec3]) -> Result<Self, KinematicsError> {
        let n = offsets.len();
        let parents: Vec<i64> = (0..n as i64).map(|j| j - 1).collect();
        let names = (0..n).map(|j| format!("joint{j}")).collect();
        let last = n.saturating_sub(1);
        Self::new(names, &parents, offsets.to_vec(), [last; 4])
    }

    pub fn with_feet(mut self, feet: [usize; 4]) -> Result<Self, KinematicsError> {
        if let Some(&f) = feet.iter().find(|&&f| f >= self.joint_count()) {
            return Err(KinematicsError::InvalidSkeleton(format!("foot joint {f} out of range")));
        }
        self.feet = feet;
        Ok(self)
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn offset(&self, joint: usize) -> Vec3 {
        self.offsets[joint]
    }

    pub fn name(&self, joint: usize) -> &str {
        &self.names[joint]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Foot contact joints: left heel, left toe, right heel, right toe.
    pub fn feet(&self) -> [usize; 4] {
        self.feet
    }

    /// Joints on the path from the root to each of `joints`, sorted.
    pub fn ancestors_of(&self, joints: &[usize]) -> Vec<usize> {
        let mut needed = vec![false; self.joint_count()];
        for &j in joints {
            let mut cur = Some(j);
            while let Some(c) = cur {
                if needed[c] {
                    break;
                }
                needed[c] = true;
                cur = self.parents[c];
            }
        }
        (0..needed.len()).filter(|&j| needed[j]).collect()
    }

    /// Joint positions with every rotation at identity and the root at the
    /// origin: accumulated rest offsets.
    pub fn rest_positions(&self) -> Vec<Vec3> {
        let mut out: Vec<Vec3> = Vec::with_capacity(self.joint_count());
        for j in 0..self.joint_count() {
            let p = match self.parents[j] {
                None => Vec3::zeros(),
                Some(p) => out[p] + self.offsets[j],
            };
            out.push(p);
        }
        out
    }

    /// Parses the text skeleton format: one `name parent ox oy oz` line per
    /// joint; `#` starts a comment. A `# feet: a b c d` comment overrides the
    /// contact joints, which otherwise come from the SMPL ankle/foot names.
    pub fn parse(text: &str) -> Result<Self, KinematicsError> {
        let mut names = Vec::new();
        let mut parents = Vec::new();
        let mut offsets = Vec::new();
        let mut feet_override = None;
        let bad = |line: usize, msg: &str| {
            KinematicsError::InvalidSkeleton(format!("line {}: {msg}", line + 1))
        };
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(rest) = comment.trim().strip_prefix("feet:") {
                    let idx: Result<Vec<usize>, _> = rest.split_whitespace().map(str::parse).collect();
                    let idx = idx.map_err(|_| bad(ln, "bad feet directive"))?;
                    let arr: [usize; 4] = idx.try_into().map_err(|_| bad(ln, "feet needs 4 indices"))?;
                    feet_override = Some(arr);
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(bad(ln, "expected `name parent ox oy oz`"));
            }
            let parent: i64 = fields[1].parse().map_err(|_| bad(ln, "bad parent index"))?;
            let mut o = [0.0; 3];
            for (k, f) in fields[2..].iter().enumerate() {
                o[k] = f.parse().map_err(|_| bad(ln, "bad offset"))?;
            }
            names.push(fields[0].to_string());
            parents.push(parent);
            offsets.push(Vec3::new(o[0], o[1], o[2]));
        }
        let feet = match feet_override {
            Some(f) => f,
            None => {
                let find = |n: &str| names.iter().position(|x| x == n);
                match (find("left_ankle"), find("left_foot"), find("right_ankle"), find("right_foot")) {
                    (Some(a), Some(b), Some(c), Some(d)) => [a, b, c, d],
                    _ => [parents.len().saturating_sub(1); 4],
                }
            }
        };
        Self::new(names, &parents, offsets, feet)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let f = self.feet;
        let _ = writeln!(s, "# feet: {} {} {} {}", f[0], f[1], f[2], f[3]);
        for j in 0..self.joint_count() {
            let p = self.parents[j].map_or(-1, |p| p as i64);
            let o = self.offsets[j];
            let _ = writeln!(s, "{} {} {} {} {}", self.names[j], p, o.x, o.y, o.z);
        }
        s
    }
}
