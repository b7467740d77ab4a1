//! Fixtures shared by the benchmarks.

use otfs_pcrb::channel::{joint_normalization_scale, sample_channel};
use otfs_pcrb::harness::ExperimentConfig;
use otfs_pcrb::waveform::build_frames;
use otfs_pcrb::{ChannelRealization, Frame, OtfsConfig, Purpose, StreamId, UserProfile};

/// Four reference users at 40 dB pilot SNR with one channel draw each.
pub struct Scene {
    pub cfg: OtfsConfig,
    pub profiles: Vec<UserProfile>,
    pub frames: Vec<Frame>,
    pub channels: Vec<ChannelRealization>,
    pub scale: f64,
}

pub fn four_user_scene() -> Scene {
    let config = ExperimentConfig::four_user();
    let cfg = config.otfs;
    let profiles: Vec<UserProfile> = config.profiles.iter().map(|p| p.with_pilot_power(1e4)).collect();
    let scale = joint_normalization_scale(&profiles, cfg.paths());
    let frames = build_frames(&profiles, &cfg).expect("valid layout");
    let channels = profiles
        .iter()
        .map(|p| sample_channel(p, scale, cfg.paths(), &mut StreamId::new(0, Purpose::Channel, p.user_id).spawn(1)))
        .collect();
    Scene {
        cfg,
        profiles,
        frames,
        channels,
        scale,
    }
}
