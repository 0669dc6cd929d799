use crate::error::{Error, Result};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// One rotational joint of the kinematic tree. `offset` is the fixed
/// bone vector from the parent joint to this joint, expressed in the
/// parent's frame (meters).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    /// Parent joint index; `None` only for the root (pelvis).
    pub parent: Option<usize>,
    pub offset: [f64; 3],
    /// End effectors are the points trajectory objectives reason about
    /// (the two wrists on the default skeleton).
    #[serde(default)]
    pub end_effector: bool,
    /// Key joints enter the whole-body evaluation metric.
    #[serde(default)]
    pub key_joint: bool,
}

impl Joint {
    fn new(name: &str, parent: Option<usize>, offset: [f64; 3]) -> Self {
        Joint {
            name: name.to_owned(),
            parent,
            offset,
            end_effector: false,
            key_joint: false,
        }
    }

    fn key(mut self) -> Self {
        self.key_joint = true;
        self
    }

    fn end_effector(mut self) -> Self {
        self.end_effector = true;
        self
    }

    pub fn offset_vec(&self) -> Vector3<f64> {
        Vector3::new(self.offset[0], self.offset[1], self.offset[2])
    }
}

/// Kinematic tree in topological order: the root sits at index 0 and
/// every other joint's parent index is strictly smaller than its own,
/// so a single forward sweep resolves world placements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Joint>", into = "Vec<Joint>")]
pub struct Skeleton {
    joints: Vec<Joint>,
}

impl Skeleton {
    pub fn new(joints: Vec<Joint>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::Skeleton("no joints".into()));
        }
        for (i, j) in joints.iter().enumerate() {
            match (i, j.parent) {
                (0, None) => {}
                (0, Some(_)) => {
                    return Err(Error::Skeleton(format!(
                        "root joint '{}' must not have a parent",
                        j.name
                    )))
                }
                (_, None) => {
                    return Err(Error::Skeleton(format!(
                        "joint '{}' (index {i}) lacks a parent; only the root may",
                        j.name
                    )))
                }
                (_, Some(p)) if p >= i => {
                    return Err(Error::Skeleton(format!(
                        "joint '{}' (index {i}) has parent {p}; joints must be \
                         listed in topological order",
                        j.name
                    )))
                }
                _ => {}
            }
        }
        Ok(Skeleton { joints })
    }

    /// Averaged adult skeleton: 20 joints, arms hanging at the sides in
    /// the rest pose, ~1.75 m standing height with the pelvis around
    /// 0.95 m. Key joints are the wrists, elbows, knees, ankles and
    /// pelvis; the wrists double as end effectors.
    pub fn default_human() -> Self {
        let joints = vec![
            Joint::new("pelvis", None, [0.0, 0.0, 0.0]).key(),
            Joint::new("l_hip", Some(0), [0.0, 0.10, -0.04]),
            Joint::new("l_knee", Some(1), [0.0, 0.0, -0.42]).key(),
            Joint::new("l_ankle", Some(2), [0.0, 0.0, -0.42]).key(),
            Joint::new("l_toes", Some(3), [0.15, 0.0, -0.07]),
            Joint::new("r_hip", Some(0), [0.0, -0.10, -0.04]),
            Joint::new("r_knee", Some(5), [0.0, 0.0, -0.42]).key(),
            Joint::new("r_ankle", Some(6), [0.0, 0.0, -0.42]).key(),
            Joint::new("r_toes", Some(7), [0.15, 0.0, -0.07]),
            Joint::new("torso", Some(0), [0.0, 0.0, 0.25]),
            Joint::new("neck", Some(9), [0.0, 0.0, 0.25]),
            Joint::new("head", Some(10), [0.0, 0.0, 0.15]),
            Joint::new("l_inner_shoulder", Some(9), [0.0, 0.09, 0.20]),
            Joint::new("l_shoulder", Some(12), [0.0, 0.11, 0.0]),
            Joint::new("l_elbow", Some(13), [0.0, 0.0, -0.28]).key(),
            Joint::new("l_wrist", Some(14), [0.0, 0.0, -0.25]).key().end_effector(),
            Joint::new("r_inner_shoulder", Some(9), [0.0, -0.09, 0.20]),
            Joint::new("r_shoulder", Some(16), [0.0, -0.11, 0.0]),
            Joint::new("r_elbow", Some(17), [0.0, 0.0, -0.28]).key(),
            Joint::new("r_wrist", Some(18), [0.0, 0.0, -0.25]).key().end_effector(),
        ];
        Skeleton::new(joints).expect("default skeleton is well formed")
    }

    /// Two-joint arm used by small-dimension tests (state dim 12).
    pub fn two_joint_arm() -> Self {
        let joints = vec![
            Joint::new("shoulder", None, [0.0, 0.0, 0.0]),
            Joint::new("wrist", Some(0), [0.0, 0.0, -0.4]).key().end_effector(),
        ];
        Skeleton::new(joints).expect("test skeleton is well formed")
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    /// Dimension of the flattened human state for this skeleton.
    pub fn state_dim(&self) -> usize {
        6 + 3 * self.joints.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn key_joint_indices(&self) -> Vec<usize> {
        (0..self.joints.len())
            .filter(|&i| self.joints[i].key_joint)
            .collect()
    }

    pub fn end_effector_index(&self, name: &str) -> Result<usize> {
        match self.index_of(name) {
            Some(i) if self.joints[i].end_effector => Ok(i),
            Some(_) => Err(Error::Skeleton(format!(
                "joint '{name}' is not flagged as an end effector"
            ))),
            None => Err(Error::Skeleton(format!("no joint named '{name}'"))),
        }
    }
}

impl TryFrom<Vec<Joint>> for Skeleton {
    type Error = Error;

    fn try_from(joints: Vec<Joint>) -> Result<Self> {
        Skeleton::new(joints)
    }
}

impl From<Skeleton> for Vec<Joint> {
    fn from(s: Skeleton) -> Vec<Joint> {
        s.joints
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_human_shape() {
        let s = Skeleton::default_human();
        assert_eq!(s.n_joints(), 20);
        assert_eq!(s.state_dim(), 66);
        assert_eq!(s.key_joint_indices().len(), 9);
        assert!(s.end_effector_index("r_wrist").is_ok());
        assert!(s.end_effector_index("pelvis").is_err());
        assert!(s.end_effector_index("no_such").is_err());
    }

    #[test]
    fn rejects_non_topological_order() {
        let bad = vec![
            Joint::new("a", None, [0.0; 3]),
            Joint::new("b", Some(2), [0.0; 3]),
            Joint::new("c", Some(0), [0.0; 3]),
        ];
        assert!(Skeleton::new(bad).is_err());
        let two_roots = vec![
            Joint::new("a", None, [0.0; 3]),
            Joint::new("b", None, [0.0; 3]),
        ];
        assert!(Skeleton::new(two_roots).is_err());
    }
}
