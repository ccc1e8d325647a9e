//! Infant limb model: 12 joints, 8 joint connections, 4 limbs.
//!
//! Map channel layout is fixed by enumeration order. Joints occupy channels
//! `0..12` grouped by limb (right arm, left arm, right leg, left leg), each
//! limb listed proximal to distal. Connections occupy channels `12..20` in
//! the same limb order, proximal connection first.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const NUM_JOINTS: usize = 12;
pub const NUM_CONNECTIONS: usize = 8;
pub const NUM_CHANNELS: usize = NUM_JOINTS + NUM_CONNECTIONS;
pub const NUM_LIMBS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JointId {
    RightShoulder,
    RightElbow,
    RightWrist,
    LeftShoulder,
    LeftElbow,
    LeftWrist,
    RightHip,
    RightKnee,
    RightAnkle,
    LeftHip,
    LeftKnee,
    LeftAnkle,
}

impl JointId {
    pub const ALL: [JointId; NUM_JOINTS] = [
        JointId::RightShoulder,
        JointId::RightElbow,
        JointId::RightWrist,
        JointId::LeftShoulder,
        JointId::LeftElbow,
        JointId::LeftWrist,
        JointId::RightHip,
        JointId::RightKnee,
        JointId::RightAnkle,
        JointId::LeftHip,
        JointId::LeftKnee,
        JointId::LeftAnkle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<JointId> {
        Self::ALL.get(index).copied()
    }

    /// Two-letter clinical abbreviation (`RS`, `LE`, `RA`, ...).
    pub fn short_name(self) -> &'static str {
        match self {
            JointId::RightShoulder => "RS",
            JointId::RightElbow => "RE",
            JointId::RightWrist => "RW",
            JointId::LeftShoulder => "LS",
            JointId::LeftElbow => "LE",
            JointId::LeftWrist => "LW",
            JointId::RightHip => "RH",
            JointId::RightKnee => "RK",
            JointId::RightAnkle => "RA",
            JointId::LeftHip => "LH",
            JointId::LeftKnee => "LK",
            JointId::LeftAnkle => "LA",
        }
    }

    pub fn from_short_name(name: &str) -> Option<JointId> {
        Self::ALL.into_iter().find(|j| j.short_name() == name)
    }

    pub fn limb(self) -> Limb {
        Limb::ALL[self.index() / 3]
    }

    pub fn is_left(self) -> bool {
        matches!(self.limb(), Limb::LeftArm | Limb::LeftLeg)
    }
}

impl fmt::Display for JointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConnectionId {
    RightShoulderElbow,
    RightElbowWrist,
    LeftShoulderElbow,
    LeftElbowWrist,
    RightHipKnee,
    RightKneeAnkle,
    LeftHipKnee,
    LeftKneeAnkle,
}

impl ConnectionId {
    pub const ALL: [ConnectionId; NUM_CONNECTIONS] = [
        ConnectionId::RightShoulderElbow,
        ConnectionId::RightElbowWrist,
        ConnectionId::LeftShoulderElbow,
        ConnectionId::LeftElbowWrist,
        ConnectionId::RightHipKnee,
        ConnectionId::RightKneeAnkle,
        ConnectionId::LeftHipKnee,
        ConnectionId::LeftKneeAnkle,
    ];

    /// Position among the connections, `0..8`.
    pub fn ordinal(self) -> usize {
        self as usize
    }

    /// Map channel of this connection, `12..20`.
    pub fn index(self) -> usize {
        NUM_JOINTS + self.ordinal()
    }

    pub fn from_index(index: usize) -> Option<ConnectionId> {
        index
            .checked_sub(NUM_JOINTS)
            .and_then(|i| Self::ALL.get(i).copied())
    }

    /// Ordered endpoints, proximal first.
    pub fn endpoints(self) -> (JointId, JointId) {
        let limb = Limb::ALL[self.ordinal() / 2];
        let [a, b, c] = limb.joints();
        if self.ordinal() % 2 == 0 {
            (a, b)
        } else {
            (b, c)
        }
    }

    pub fn limb(self) -> Limb {
        Limb::ALL[self.ordinal() / 2]
    }

    pub fn name(self) -> String {
        let (a, b) = self.endpoints();
        format!("{a}-{b}")
    }
}

impl fmt::Display for ConnectionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Limb {
    RightArm,
    LeftArm,
    RightLeg,
    LeftLeg,
}

impl Limb {
    pub const ALL: [Limb; NUM_LIMBS] = [Limb::RightArm, Limb::LeftArm, Limb::RightLeg, Limb::LeftLeg];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Joints ordered proximal, middle, distal.
    pub fn joints(self) -> [JointId; 3] {
        let base = self.index() * 3;
        [JointId::ALL[base], JointId::ALL[base + 1], JointId::ALL[base + 2]]
    }

    /// Connections ordered proximal (to the middle joint), then distal.
    pub fn connections(self) -> [ConnectionId; 2] {
        let base = self.index() * 2;
        [ConnectionId::ALL[base], ConnectionId::ALL[base + 1]]
    }

    pub fn name(self) -> &'static str {
        match self {
            Limb::RightArm => "right_arm",
            Limb::LeftArm => "left_arm",
            Limb::RightLeg => "right_leg",
            Limb::LeftLeg => "left_leg",
        }
    }
}

impl fmt::Display for Limb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn limb_of(joint: JointId) -> Limb {
    joint.limb()
}

/// A map channel: either a joint confidence map or a connection map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    Joint(JointId),
    Connection(ConnectionId),
}

impl Channel {
    pub fn index(self) -> usize {
        match self {
            Channel::Joint(j) => j.index(),
            Channel::Connection(c) => c.index(),
        }
    }

    pub fn from_index(index: usize) -> Option<Channel> {
        JointId::from_index(index)
            .map(Channel::Joint)
            .or_else(|| ConnectionId::from_index(index).map(Channel::Connection))
    }

    pub fn all() -> impl Iterator<Item = Channel> {
        (0..NUM_CHANNELS).filter_map(Channel::from_index)
    }

    pub fn name(self) -> String {
        match self {
            Channel::Joint(j) => j.short_name().to_string(),
            Channel::Connection(c) => c.name(),
        }
    }
}

impl From<JointId> for Channel {
    fn from(j: JointId) -> Self {
        Channel::Joint(j)
    }
}

impl From<ConnectionId> for Channel {
    fn from(c: ConnectionId) -> Self {
        Channel::Connection(c)
    }
}

pub fn channel_index(id: impl Into<Channel>) -> usize {
    id.into().index()
}

/// Human-readable dump of the topology: ids, channel indices and limb membership.
pub fn describe() -> String {
    let mut out = String::new();
    out.push_str("# channel\tkind\tname\tlimb\n");
    for ch in Channel::all() {
        let (kind, limb) = match ch {
            Channel::Joint(j) => ("joint", j.limb()),
            Channel::Connection(c) => ("connection", c.limb()),
        };
        out.push_str(&format!("{}\t{}\t{}\t{}\n", ch.index(), kind, ch.name(), limb));
    }
    out.push_str("# limb\tjoints\tconnections\n");
    for limb in Limb::ALL {
        let joints: Vec<_> = limb.joints().iter().map(|j| j.short_name()).collect();
        let conns: Vec<_> = limb.connections().iter().map(|c| c.name()).collect();
        out.push_str(&format!("{}\t{}\t{}\n", limb, joints.join(","), conns.join(",")));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn limb_membership() {
        assert_eq!(limb_of(JointId::RightWrist), Limb::RightArm);
        assert_eq!(limb_of(JointId::LeftHip), Limb::LeftLeg);
        assert_eq!(limb_of(JointId::LeftKnee), Limb::LeftLeg);
    }

    #[test]
    fn channel_layout_is_a_bijection() {
        assert_eq!(channel_index(JointId::ALL[0]), 0);
        assert_eq!(channel_index(ConnectionId::ALL[0]), 12);
        let mut seen = HashSet::new();
        for ch in Channel::all() {
            assert!(seen.insert(ch.index()));
            assert_eq!(Channel::from_index(ch.index()), Some(ch));
        }
        assert_eq!(seen.len(), NUM_CHANNELS);
        assert!(seen.iter().all(|&i| i < NUM_CHANNELS));
        assert_eq!(Channel::from_index(NUM_CHANNELS), None);
        for j in JointId::ALL {
            assert!(j.index() < NUM_JOINTS);
        }
        for c in ConnectionId::ALL {
            assert!((NUM_JOINTS..NUM_CHANNELS).contains(&c.index()));
        }
    }

    #[test]
    fn connections_stay_within_a_limb() {
        for c in ConnectionId::ALL {
            let (a, b) = c.endpoints();
            assert_eq!(a.limb(), b.limb());
            assert_eq!(a.limb(), c.limb());
        }
    }

    #[test]
    fn limbs_partition_joints_and_connections() {
        let joints: Vec<_> = Limb::ALL.iter().flat_map(|l| l.joints()).collect();
        let uniq: HashSet<_> = joints.iter().collect();
        assert_eq!(joints.len(), NUM_JOINTS);
        assert_eq!(uniq.len(), NUM_JOINTS);
        let conns: HashSet<_> = Limb::ALL.iter().flat_map(|l| l.connections()).collect();
        assert_eq!(conns.len(), NUM_CONNECTIONS);
        // the left leg is hip-knee, knee-ankle like the right one
        assert_eq!(
            ConnectionId::LeftHipKnee.endpoints(),
            (JointId::LeftHip, JointId::LeftKnee)
        );
        assert_eq!(ConnectionId::LeftKneeAnkle.name(), "LK-LA");
    }

    #[test]
    fn short_names_round_trip() {
        for j in JointId::ALL {
            assert_eq!(JointId::from_short_name(j.short_name()), Some(j));
        }
        assert_eq!(JointId::from_short_name("XX"), None);
    }

    #[test]
    fn describe_lists_every_channel() {
        let text = describe();
        for ch in Channel::all() {
            assert!(text.contains(&ch.name()));
        }
    }
}
