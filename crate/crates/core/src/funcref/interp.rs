//! Executes a packed image instruction by instruction against a DRAM model
//! and three on-chip buffers, and the equivalent layer-by-layer reference.

use super::*;
use crate::alloc::round_up;
use crate::codegen::{parse_image, Instruction, Slot};
use crate::schedule::{Schedule, TensorRef};

struct Machine {
    dram: Vec<u8>,
    bufs: [Vec<u8>; 3],
}

impl Machine {
    fn dram_slice(&self, at: u32, n: usize) -> Result<&[u8]> {
        self.dram
            .get(at as usize..at as usize + n)
            .ok_or_else(|| Error::Tensor(format!("DRAM read of {n} bytes at {at:#x} is out of range")))
    }

    fn read(&mut self, slot: Slot, addr: u32, staged: bool, shape: (usize, usize, usize)) -> Result<Tensor> {
        let n = shape.0 * shape.1 * shape.2;
        let bytes = match slot {
            Slot::OffChip => self.dram_slice(addr, n)?.to_vec(),
            Slot::Buffer(id) if staged => {
                let v = self.dram_slice(addr, n)?.to_vec();
                self.buf_write(id, 0, &v);
                v
            }
            Slot::Buffer(id) => {
                let b = &self.bufs[id as usize];
                b.get(addr as usize..addr as usize + n)
                    .ok_or_else(|| Error::Tensor(format!("buffer {id} read of {n} bytes at {addr} was never written")))?
                    .to_vec()
            }
        };
        Tensor::from_vec(shape.0, shape.1, shape.2, bytes.into_iter().map(|b| b as i8).collect())
    }

    fn buf_write(&mut self, id: u8, at: usize, v: &[u8]) {
        let b = &mut self.bufs[id as usize];
        if b.len() < at + v.len() {
            b.resize(at + v.len(), 0);
        }
        b[at..at + v.len()].copy_from_slice(v);
    }

    fn dram_write(&mut self, at: u32, v: &[u8]) -> Result<()> {
        let at = at as usize;
        let dst = self
            .dram
            .get_mut(at..at + v.len())
            .ok_or_else(|| Error::Tensor(format!("DRAM write of {} bytes at {at:#x} is out of range", v.len())))?;
        dst.copy_from_slice(v);
        Ok(())
    }

    fn weights(&self, ins: &Instruction) -> Result<LayerWeights> {
        let (k, ic, oc) = (ins.kernel as usize, ins.in_c as usize, ins.out_c as usize);
        let n = match ins.opcode {
            LayerKind::Conv => k * k * ic * oc,
            LayerKind::Dwconv => k * k * ic,
            LayerKind::Fc => ins.in_w as usize * ins.in_h as usize * ic * oc,
            _ => return Ok(LayerWeights::default()),
        };
        let raw = self.dram_slice(ins.weight_addr, n + oc * 4)?;
        Ok(LayerWeights {
            weights: raw[..n].iter().map(|&b| b as i8).collect(),
            bias: raw[n..].chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect(),
        })
    }
}

fn execute(ins: &Instruction, x: &Tensor, second: Option<&Tensor>, w: &LayerWeights) -> Result<Tensor> {
    let missing = || Error::Tensor(format!("{} instruction without its second operand", ins.opcode.as_str()));
    let mut y = match ins.opcode {
        LayerKind::Conv | LayerKind::Dwconv => conv2d(
            x,
            w,
            ConvParams {
                kernel: ins.kernel as usize,
                stride: ins.stride as usize,
                out_c: if ins.opcode == LayerKind::Dwconv { ins.in_c as usize } else { ins.out_c as usize },
                depthwise: ins.opcode == LayerKind::Dwconv,
                shift: ins.quant_shift,
            },
        )?,
        LayerKind::Fc => fully_connected(x, w, ins.out_c as usize, ins.quant_shift)?,
        LayerKind::Maxpool => maxpool(x, ins.kernel as usize, ins.stride as usize),
        LayerKind::AvgpoolGlobal => avgpool_global(x),
        LayerKind::Upsample => upsample(x, ins.stride as usize),
        LayerKind::Activation => x.clone(),
        LayerKind::EltwiseAdd => eltwise_add(x, second.ok_or_else(missing)?, ins.quant_shift)?,
        LayerKind::Scale => scale(x, second.ok_or_else(missing)?, ins.quant_shift)?,
        LayerKind::Concat => match second {
            Some(b) => concat(&[x, b])?,
            None => x.clone(),
        },
    };
    activate(&mut y, ins.activation);
    if ins.flags.fused_eltwise {
        y = eltwise_add(&y, second.ok_or_else(missing)?, ins.eltwise_shift)?;
        activate(&mut y, ins.post_activation);
    }
    if ins.flags.fused_pool {
        y = maxpool(&y, ins.pool_kernel as usize, ins.pool_stride as usize);
    }
    if ins.flags.upsample {
        y = upsample(&y, ins.upsample_factor as usize);
    }
    Ok(y)
}

/// Runs a packed image and returns every instruction's output tensor.
pub fn run_image(img: &[u8]) -> Result<Vec<Tensor>> {
    let p = parse_image(img)?;
    let h = &p.header;
    if h.act_bytes != 1 {
        return Err(Error::Tensor(format!("interpreter supports 8-bit activations, image uses {} bytes", h.act_bytes)));
    }
    let image_len = if p.instructions.is_empty() { 64 } else { h.input_offset + h.input_len };
    let total = round_up(image_len, 64) + h.feature_len;
    let mut m = Machine { dram: img.to_vec(), bufs: Default::default() };
    m.dram.resize(total as usize, 0);

    let mut outs = Vec::with_capacity(p.instructions.len());
    for ins in &p.instructions {
        let (iw, ih, ic) = (ins.in_w as usize, ins.in_h as usize, ins.in_c as usize);
        let first_c = if ins.opcode == LayerKind::Concat { ins.concat_split as usize } else { ic };
        let x = m.read(ins.alloc_in, ins.input_addr, ins.flags.stage_input, (ih, iw, first_c))?;
        let second = match ins.alloc_shortcut {
            None => None,
            Some(slot) => {
                let shape = match ins.opcode {
                    LayerKind::Concat => (ih, iw, ic - first_c),
                    LayerKind::Scale => (1, 1, ic),
                    _ => {
                        let (w, h) = ins.head_out_dims();
                        (h as usize, w as usize, ins.out_c as usize)
                    }
                };
                Some(m.read(slot, ins.shortcut_addr, ins.flags.stage_shortcut, shape)?)
            }
        };
        let w = m.weights(ins)?;
        let y = execute(ins, &x, second.as_ref(), &w)?;
        if y.shape() != (ins.out_h as usize, ins.out_w as usize, ins.out_c as usize) {
            return Err(Error::Tensor(format!(
                "{} instruction produced {:?}, header says {}x{}x{}",
                ins.opcode.as_str(),
                y.shape(),
                ins.out_h,
                ins.out_w,
                ins.out_c
            )));
        }
        let bytes = y.to_bytes();
        match ins.alloc_out {
            Slot::OffChip => m.dram_write(ins.output_addr, &bytes)?,
            Slot::Buffer(id) if ins.flags.spill => {
                m.buf_write(id, 0, &bytes);
                m.dram_write(ins.output_addr, &bytes)?;
            }
            Slot::Buffer(id) => m.buf_write(id, ins.output_addr as usize, &bytes),
        }
        outs.push(y);
    }
    Ok(outs)
}

/// Every group's output computed directly from the graph, layer by layer.
pub fn run_reference(s: &Schedule, weights: &[LayerWeights], input: &Tensor) -> Result<Vec<Tensor>> {
    let mut outs: Vec<Tensor> = Vec::with_capacity(s.groups.len());
    for (g, grp) in s.groups.iter().enumerate() {
        let io = &s.io[g];
        let get = |t: TensorRef| match t {
            TensorRef::Input => input,
            TensorRef::Group(p) => &outs[p],
        };
        let extra: Vec<&Tensor> = io.concat_srcs.iter().skip(1).map(|c| get(c.0)).collect();
        let y = conv_reference(&s.graph, grp, get(io.input), io.shortcut.map(get), &extra, weights)?;
        outs.push(y);
    }
    Ok(outs)
}
