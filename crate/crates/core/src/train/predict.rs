//! Inference from a checkpoint.

use std::path::Path;

use super::checkpoint::{load_into, Checkpoint};
use super::prepare::build_translator;
use crate::bridge::Translator;
use crate::data::{DepthMap, ImageTensor, TextMask};
use crate::depth_net::DepthNet;
use crate::error::Result;
use crate::text::{strip_text_from_depth, TextSegmenter};

pub struct Predictor {
    net: DepthNet,
    segmenter: TextSegmenter,
    translator: Box<dyn Translator>,
}

impl std::fmt::Debug for Predictor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Predictor")
            .field("translator", &self.translator.name())
            .finish_non_exhaustive()
    }
}

impl Predictor {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = &ckpt.config;
        let net = DepthNet::new(config.net.clone(), 0)?;
        load_into(net.store(), &ckpt.depth_net, "depth_net")?;
        let segmenter = TextSegmenter::new(config.segmenter.model.clone(), 0)?;
        load_into(segmenter.store(), &ckpt.segmenter, "segmenter")?;
        let translator = build_translator(config, ckpt.real_stats)?;
        Ok(Self {
            net,
            segmenter,
            translator,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn net(&self) -> &DepthNet {
        &self.net
    }

    pub fn segmenter(&self) -> &TextSegmenter {
        &self.segmenter
    }

    pub fn translator(&self) -> &dyn Translator {
        self.translator.as_ref()
    }

    pub fn segment_text(&self, image: &ImageTensor) -> Result<TextMask> {
        self.segmenter.segment_text(image)
    }

    /// Depth for `image`, optionally translated first and optionally with
    /// text regions (found on the untranslated image) flattened away.
    pub fn predict(&self, image: &ImageTensor, use_translator: bool, use_text_mask: bool) -> Result<DepthMap> {
        let depth = if use_translator {
            self.net.forward(&self.translator.translate(image)?)?.depth
        } else {
            self.net.forward(image)?.depth
        };
        if use_text_mask {
            strip_text_from_depth(&depth, &self.segmenter.segment_text(image)?)
        } else {
            Ok(depth)
        }
    }
}

pub fn predict(ckpt: &Checkpoint, image: &ImageTensor, use_translator: bool, use_text_mask: bool) -> Result<DepthMap> {
    Predictor::from_checkpoint(ckpt)?.predict(image, use_translator, use_text_mask)
}
