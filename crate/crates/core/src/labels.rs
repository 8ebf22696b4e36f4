//! Cityscapes label conventions: raw label ids, the 19 training ids, and the
//! instance classes eligible as occluders.

/// Number of evaluated semantic classes.
pub const NUM_CLASSES: usize = 19;

/// Void / ignore trainId. Also marks "no occluded class" in the occluded channel.
pub const IGNORE: u8 = 255;

pub const ROAD: u8 = 0;
pub const SIDEWALK: u8 = 1;
pub const BUILDING: u8 = 2;
pub const WALL: u8 = 3;
pub const FENCE: u8 = 4;
pub const POLE: u8 = 5;
pub const TRAFFIC_LIGHT: u8 = 6;
pub const TRAFFIC_SIGN: u8 = 7;
pub const VEGETATION: u8 = 8;
pub const TERRAIN: u8 = 9;
pub const SKY: u8 = 10;
pub const PERSON: u8 = 11;
pub const RIDER: u8 = 12;
pub const CAR: u8 = 13;
pub const TRUCK: u8 = 14;
pub const BUS: u8 = 15;
pub const TRAIN: u8 = 16;
pub const MOTORCYCLE: u8 = 17;
pub const BICYCLE: u8 = 18;

pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "road",
    "sidewalk",
    "building",
    "wall",
    "fence",
    "pole",
    "traffic light",
    "traffic sign",
    "vegetation",
    "terrain",
    "sky",
    "person",
    "rider",
    "car",
    "truck",
    "bus",
    "train",
    "motorcycle",
    "bicycle",
];

/// trainIds of the classes whose instances can be pasted as occluders.
pub const INSTANCE_CLASSES: [u8; 8] = [
    PERSON, RIDER, CAR, TRUCK, BUS, TRAIN, MOTORCYCLE, BICYCLE,
];

/// Raw Cityscapes label id → trainId, for every raw id in `0..=33`.
const RAW_TO_TRAIN: [u8; 34] = [
    IGNORE, // 0 unlabeled
    IGNORE, // 1 ego vehicle
    IGNORE, // 2 rectification border
    IGNORE, // 3 out of roi
    IGNORE, // 4 static
    IGNORE, // 5 dynamic
    IGNORE, // 6 ground
    ROAD,
    SIDEWALK,
    IGNORE, // 9 parking
    IGNORE, // 10 rail track
    BUILDING,
    WALL,
    FENCE,
    IGNORE, // 14 guard rail
    IGNORE, // 15 bridge
    IGNORE, // 16 tunnel
    POLE,
    IGNORE, // 18 polegroup
    TRAFFIC_LIGHT,
    TRAFFIC_SIGN,
    VEGETATION,
    TERRAIN,
    SKY,
    PERSON,
    RIDER,
    CAR,
    TRUCK,
    BUS,
    IGNORE, // 29 caravan
    IGNORE, // 30 trailer
    TRAIN,
    MOTORCYCLE,
    BICYCLE,
];

/// Maps a raw Cityscapes label id to its trainId. Total over `u8`; anything
/// outside the 19 evaluated classes maps to [`IGNORE`].
#[inline]
pub fn raw_to_train_id(raw: u8) -> u8 {
    RAW_TO_TRAIN.get(raw as usize).copied().unwrap_or(IGNORE)
}

/// Inverse of [`raw_to_train_id`] on the 19 evaluated classes.
pub fn train_to_raw_id(train_id: u8) -> Option<u8> {
    RAW_TO_TRAIN
        .iter()
        .position(|&t| t == train_id && t != IGNORE)
        .map(|p| p as u8)
}

#[inline]
pub fn is_valid_label(v: u8) -> bool {
    (v as usize) < NUM_CLASSES || v == IGNORE
}

#[inline]
pub fn is_instance_class(train_id: u8) -> bool {
    (PERSON..=BICYCLE).contains(&train_id)
}

pub fn class_name(train_id: u8) -> &'static str {
    CLASS_NAMES
        .get(train_id as usize)
        .copied()
        .unwrap_or("void")
}
