from chanfree.models.backbone import BackboneConfig, BasicBlock, ResNet1d
from chanfree.models.baselines import (
    DEFAULT_LAMBDA, MODEL_KINDS, FixedChannelBaseline, SlotAssigner, SlotAssignment, SlotFusionModel,
    baseline_fixed_forward, channel_summaries, ef_forward, lf_plain_forward, make_model, mf_forward,
    slot_assign, slot_mix,
)
from chanfree.models.channel_free import (
    ChannelFeatures, ChannelFreeModel, LossConfig, LossTerms, ModelOutput, combination_loss, fuse_mean,
)

__all__ = [
    "BackboneConfig", "BasicBlock", "ResNet1d", "DEFAULT_LAMBDA", "MODEL_KINDS", "FixedChannelBaseline",
    "SlotAssigner", "SlotAssignment", "SlotFusionModel", "baseline_fixed_forward", "channel_summaries",
    "ef_forward", "lf_plain_forward", "make_model", "mf_forward", "slot_assign", "slot_mix", "ChannelFeatures",
    "ChannelFreeModel", "LossConfig", "LossTerms", "ModelOutput", "combination_loss", "fuse_mean",
]
