//! Reference architectures for the target model, the attacker's substitute
//! client, discriminator and inverse network.
//!
//! Everything is sized for small square images (16×16 by default) so a full
//! session fits comfortably on a single CPU core.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{infer_shapes, LayerSpec};

/// Number of client blocks in the target model; split points run `0..=TARGET_BLOCKS`.
pub const TARGET_BLOCKS: usize = 4;
/// Width of the hidden layer the server hands to the client's top model.
pub const TOP_HIDDEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SubstituteFamily {
    #[default]
    Vgg,
    Res,
    Dense,
}

fn conv_bn_relu(in_ch: usize, out_ch: usize) -> Vec<LayerSpec> {
    vec![LayerSpec::conv(in_ch, out_ch, 3, 1, 1), LayerSpec::BatchNorm2d { channels: out_ch }, LayerSpec::Relu]
}

fn pool() -> LayerSpec {
    LayerSpec::MaxPool2d { window: 2, stride: 2 }
}

/// The four VGG-style blocks of the target model.
pub fn target_blocks(image_channels: usize) -> Vec<Vec<LayerSpec>> {
    let mut b1 = conv_bn_relu(image_channels, 8);
    b1.push(pool());
    let b2 = conv_bn_relu(8, 16);
    let mut b3 = conv_bn_relu(16, 16);
    b3.push(pool());
    let mut b4 = conv_bn_relu(16, 32);
    b4.push(pool());
    vec![b1, b2, b3, b4]
}

fn check_split(split_point: usize) -> Result<()> {
    if split_point > TARGET_BLOCKS {
        return Err(Error::InvalidArgument(format!("split point {split_point} outside 0..={TARGET_BLOCKS}")));
    }
    Ok(())
}

/// Client half: the first `split_point` blocks. Split 0 is the identity client.
pub fn client_specs(image_shape: &[usize], split_point: usize) -> Result<Vec<LayerSpec>> {
    check_split(split_point)?;
    Ok(target_blocks(image_shape[0]).into_iter().take(split_point).flatten().collect())
}

/// Server half. In the label-protected topology the classifier head lives
/// on the client (see [`top_specs`]) and the server ends in a hidden layer.
pub fn server_specs(image_shape: &[usize], split_point: usize, num_classes: usize, label_protected: bool) -> Result<Vec<LayerSpec>> {
    check_split(split_point)?;
    let mut specs: Vec<LayerSpec> = target_blocks(image_shape[0]).into_iter().skip(split_point).flatten().collect();
    let all: Vec<LayerSpec> = target_blocks(image_shape[0]).into_iter().flatten().collect();
    let feat: usize = infer_shapes(&all, image_shape)?.last().expect("nonempty").iter().product();
    if label_protected {
        specs.push(LayerSpec::Linear { in_features: feat, out_features: TOP_HIDDEN });
        specs.push(LayerSpec::Relu);
    } else {
        specs.push(LayerSpec::Linear { in_features: feat, out_features: num_classes });
    }
    Ok(specs)
}

pub fn top_specs(num_classes: usize) -> Vec<LayerSpec> {
    vec![LayerSpec::Linear { in_features: TOP_HIDDEN, out_features: num_classes }]
}

/// Per-sample smashed-data shape at a split point.
pub fn smashed_shape(image_shape: &[usize], split_point: usize) -> Result<Vec<usize>> {
    let specs = client_specs(image_shape, split_point)?;
    Ok(infer_shapes(&specs, image_shape)?.pop().expect("nonempty"))
}

fn halvings(from: usize, to: usize) -> Result<usize> {
    let mut n = 0;
    let mut s = from;
    while s > to {
        if !s.is_multiple_of(2) {
            break;
        }
        s /= 2;
        n += 1;
    }
    if s != to {
        return Err(Error::Shape(format!("cannot reach spatial size {to} from {from} by halving")));
    }
    Ok(n)
}

/// Substitute client producing exactly `smashed` (`[C, H, W]`) from images.
pub fn substitute_specs(family: SubstituteFamily, image_shape: &[usize], smashed: &[usize], width: usize) -> Result<Vec<LayerSpec>> {
    let [c_out, h_out, _] = *smashed else {
        return Err(Error::Shape(format!("substitute needs a [C, H, W] target, got {smashed:?}")));
    };
    let downs = halvings(image_shape[1], h_out)?;
    let mut specs = Vec::new();
    let mut ch = image_shape[0];
    for stage in 0..downs.max(1) {
        specs.extend(conv_bn_relu(ch, width));
        ch = width;
        if stage == 0 {
            match family {
                SubstituteFamily::Vgg => {}
                SubstituteFamily::Res => specs.push(LayerSpec::ResBlock { channels: ch }),
                SubstituteFamily::Dense => {
                    let growth = (width / 2).max(1);
                    specs.push(LayerSpec::DenseBlock { in_ch: ch, growth });
                    ch += growth;
                }
            }
        }
        if stage < downs {
            specs.push(pool());
        }
    }
    specs.extend(conv_bn_relu(ch, c_out));
    let out = infer_shapes(&specs, image_shape)?.pop().expect("nonempty");
    if out != smashed {
        return Err(Error::Shape(format!("substitute produces {out:?}, smashed data is {smashed:?}")));
    }
    Ok(specs)
}

/// Discriminator over unflattened feature maps, ending in one logit per sample.
pub fn discriminator_specs(smashed: &[usize]) -> Result<Vec<LayerSpec>> {
    let [c, _, _] = *smashed else {
        return Err(Error::Shape(format!("discriminator needs [C, H, W], got {smashed:?}")));
    };
    let width = 8;
    let mut specs = vec![
        LayerSpec::conv(c, width, 3, 2, 1),
        LayerSpec::Relu,
        LayerSpec::ResBlock { channels: width },
        LayerSpec::conv(width, width, 3, 2, 1),
        LayerSpec::Relu,
    ];
    let feat: usize = infer_shapes(&specs, smashed)?.last().expect("nonempty").iter().product();
    specs.push(LayerSpec::Linear { in_features: feat, out_features: 1 });
    Ok(specs)
}

/// Decoder from smashed data back to image space: stride-2 transposed
/// convolutions, a 3×3 projection and a Tanh.
pub fn inverse_specs(smashed: &[usize], image_shape: &[usize], width: usize) -> Result<Vec<LayerSpec>> {
    let [c, h, _] = *smashed else {
        return Err(Error::Shape(format!("inverse network needs [C, H, W], got {smashed:?}")));
    };
    let ups = halvings(image_shape[1], h)?;
    let mut specs = Vec::new();
    let mut ch = c;
    for _ in 0..ups {
        specs.push(LayerSpec::conv_t(ch, width, 2, 2, 0));
        specs.push(LayerSpec::Relu);
        ch = width;
    }
    if ups == 0 {
        specs.push(LayerSpec::conv(ch, width, 3, 1, 1));
        specs.push(LayerSpec::Relu);
        ch = width;
    }
    specs.push(LayerSpec::conv(ch, image_shape[0], 3, 1, 1));
    specs.push(LayerSpec::Tanh);
    let out = infer_shapes(&specs, smashed)?.pop().expect("nonempty");
    if out != image_shape {
        return Err(Error::Shape(format!("inverse network produces {out:?}, images are {image_shape:?}")));
    }
    Ok(specs)
}
