use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    Xposition,
    Yposition,
    Zposition,
    Xrotation,
    Yrotation,
    Zrotation,
}

impl Channel {
    pub fn parse(token: &str) -> Option<Channel> {
        Some(match token {
            "Xposition" => Channel::Xposition,
            "Yposition" => Channel::Yposition,
            "Zposition" => Channel::Zposition,
            "Xrotation" => Channel::Xrotation,
            "Yrotation" => Channel::Yrotation,
            "Zrotation" => Channel::Zrotation,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Xposition => "Xposition",
            Channel::Yposition => "Yposition",
            Channel::Zposition => "Zposition",
            Channel::Xrotation => "Xrotation",
            Channel::Yrotation => "Yrotation",
            Channel::Zrotation => "Zrotation",
        }
    }

    /// Axis index 0..3.
    pub fn axis(self) -> usize {
        match self {
            Channel::Xposition | Channel::Xrotation => 0,
            Channel::Yposition | Channel::Yrotation => 1,
            Channel::Zposition | Channel::Zrotation => 2,
        }
    }

    pub fn is_rotation(self) -> bool {
        matches!(self, Channel::Xrotation | Channel::Yrotation | Channel::Zrotation)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Offset from the parent joint, in centimeters.
    pub offset: Vector3<f64>,
    pub channels: Vec<Channel>,
    pub end_site: Option<Vector3<f64>>,
}

impl Joint {
    /// Rotation axes in the order the channels list them.
    pub fn rotation_order(&self) -> Vec<usize> {
        self.channels.iter().filter(|c| c.is_rotation()).map(|c| c.axis()).collect()
    }
}

/// Joint hierarchy with parents listed before children.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    joints: Vec<Joint>,
    channel_start: Vec<usize>,
    num_channels: usize,
}

/// World-space pose of one joint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointPose {
    pub position: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl Skeleton {
    pub fn new(joints: Vec<Joint>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::Motion("skeleton has no joints".into()));
        }
        for (i, j) in joints.iter().enumerate() {
            match (i, j.parent) {
                (0, None) => {}
                (0, Some(_)) => return Err(Error::Motion("first joint must be the root".into())),
                (_, None) => return Err(Error::Motion(format!("joint `{}` is a second root", j.name))),
                (_, Some(p)) if p >= i => {
                    return Err(Error::Motion(format!("joint `{}` listed before its parent", j.name)))
                }
                _ => {}
            }
        }
        let mut channel_start = Vec::with_capacity(joints.len());
        let mut n = 0;
        for j in &joints {
            channel_start.push(n);
            n += j.channels.len();
        }
        Ok(Skeleton { joints, channel_start, num_channels: n })
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint(&self, i: usize) -> &Joint {
        &self.joints[i]
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn channel_start(&self, joint: usize) -> usize {
        self.channel_start[joint]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name).ok_or_else(|| Error::Config(format!("skeleton has no joint named `{name}`")))
    }

    pub fn children(&self, joint: usize) -> impl Iterator<Item = usize> + '_ {
        self.joints.iter().enumerate().filter(move |(_, j)| j.parent == Some(joint)).map(|(i, _)| i)
    }

    /// Local translation (offset plus any position channels) and rotation of a joint.
    pub fn local_transform(&self, joint: usize, frame: &[f64]) -> (Vector3<f64>, UnitQuaternion<f64>) {
        let j = &self.joints[joint];
        let values = &frame[self.channel_start[joint]..self.channel_start[joint] + j.channels.len()];
        let mut translation = j.offset;
        let mut rotation = UnitQuaternion::identity();
        for (c, &v) in j.channels.iter().zip(values) {
            if c.is_rotation() {
                rotation *= axis_rotation(c.axis(), v.to_radians());
            } else {
                translation[c.axis()] += v;
            }
        }
        (translation, rotation)
    }

    /// World pose of every joint for one frame of channel values.
    pub fn forward_kinematics(&self, frame: &[f64]) -> Vec<JointPose> {
        let mut poses: Vec<JointPose> = Vec::with_capacity(self.joints.len());
        for (i, j) in self.joints.iter().enumerate() {
            let (t, r) = self.local_transform(i, frame);
            let pose = match j.parent {
                None => JointPose { position: t, rotation: r },
                Some(p) => {
                    let parent = poses[p];
                    JointPose { position: parent.position + parent.rotation * t, rotation: parent.rotation * r }
                }
            };
            poses.push(pose);
        }
        poses
    }
}

pub fn axis_rotation(axis: usize, radians: f64) -> UnitQuaternion<f64> {
    let a = match axis {
        0 => Vector3::x_axis(),
        1 => Vector3::y_axis(),
        _ => Vector3::z_axis(),
    };
    UnitQuaternion::from_axis_angle(&a, radians)
}

/// Composes `R = R_{order[0]}(a0) · R_{order[1]}(a1) · R_{order[2]}(a2)` from degrees.
pub fn euler_to_quaternion(order: &[usize], degrees: &[f64]) -> UnitQuaternion<f64> {
    order
        .iter()
        .zip(degrees)
        .fold(UnitQuaternion::identity(), |q, (&axis, &d)| q * axis_rotation(axis, d.to_radians()))
}

/// Inverse of [`euler_to_quaternion`] for three distinct axes, in degrees. The
/// middle angle is returned in [-90, 90].
pub fn quaternion_to_euler(q: &UnitQuaternion<f64>, order: [usize; 3]) -> [f64; 3] {
    let m: Matrix3<f64> = q.to_rotation_matrix().into_inner();
    let [i, j, k] = order;
    let s = if j == (i + 1) % 3 { 1.0 } else { -1.0 };
    let sin_b = (s * m[(i, k)]).clamp(-1.0, 1.0);
    let b = sin_b.asin();
    let (a, c) = if sin_b.abs() < 1.0 - 1e-12 {
        ((-s * m[(j, k)]).atan2(m[(k, k)]), (-s * m[(i, j)]).atan2(m[(i, i)]))
    } else {
        // gimbal lock: fold the free angle into the first axis
        ((s * m[(k, j)]).atan2(m[(j, j)]), 0.0)
    };
    [a.to_degrees(), b.to_degrees(), c.to_degrees()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ORDERS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

    proptest! {
        #[test]
        fn euler_round_trip(a in -179.0f64..179.0, b in -89.0f64..89.0, c in -179.0f64..179.0, o in 0usize..6) {
            let order = ORDERS[o];
            let q = euler_to_quaternion(&order, &[a, b, c]);
            let back = quaternion_to_euler(&q, order);
            prop_assert!((back[0] - a).abs() < 1e-8, "{:?} vs {:?}", back, (a, b, c));
            prop_assert!((back[1] - b).abs() < 1e-8);
            prop_assert!((back[2] - c).abs() < 1e-8);
        }
    }

    #[test]
    fn gimbal_lock_reproduces_rotation() {
        for order in ORDERS {
            let q = euler_to_quaternion(&order, &[30.0, 90.0, 20.0]);
            let e = quaternion_to_euler(&q, order);
            let back = euler_to_quaternion(&order, &e);
            assert!(q.angle_to(&back) < 1e-6, "{order:?} {e:?}");
        }
    }

    #[test]
    fn rejects_bad_topology() {
        let j = |name: &str, parent| Joint {
            name: name.into(),
            parent,
            offset: Vector3::zeros(),
            channels: vec![],
            end_site: None,
        };
        assert!(Skeleton::new(vec![j("a", None), j("b", None)]).is_err());
        assert!(Skeleton::new(vec![j("a", None), j("b", Some(2)), j("c", Some(0))]).is_err());
        assert!(Skeleton::new(vec![j("a", None), j("b", Some(0))]).is_ok());
    }

    #[test]
    fn forward_kinematics_chain() {
        let joints = vec![
            Joint {
                name: "root".into(),
                parent: None,
                offset: Vector3::zeros(),
                channels: vec![Channel::Xposition, Channel::Yposition, Channel::Zposition, Channel::Zrotation],
                end_site: None,
            },
            Joint {
                name: "tip".into(),
                parent: Some(0),
                offset: Vector3::new(10.0, 0.0, 0.0),
                channels: vec![Channel::Zrotation],
                end_site: None,
            },
        ];
        let skel = Skeleton::new(joints).unwrap();
        let poses = skel.forward_kinematics(&[1.0, 2.0, 3.0, 90.0, 0.0]);
        assert!((poses[1].position - Vector3::new(1.0, 12.0, 3.0)).norm() < 1e-9);
    }
}
