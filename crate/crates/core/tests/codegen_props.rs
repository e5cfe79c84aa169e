use proptest::prelude::*;

use cutpoint_core::alloc::{assign_buffers_forcing, Loc};
use cutpoint_core::codegen::{buffer_ids, emit_instructions, Flags, Instruction, Slot, WORDS};
use cutpoint_core::graph::{Activation, SeRole};
use cutpoint_core::{zoo, HwConfig, LayerKind, Schedule, Scheme};

fn kind() -> impl Strategy<Value = LayerKind> {
    use LayerKind::*;
    prop::sample::select(vec![Conv, Dwconv, Fc, Maxpool, AvgpoolGlobal, EltwiseAdd, Concat, Upsample, Activation, Scale])
}

fn act() -> impl Strategy<Value = Activation> {
    prop::sample::select(vec![Activation::None, Activation::Relu, Activation::Leaky, Activation::Sigmoid, Activation::Swish])
}

fn slot() -> impl Strategy<Value = Slot> {
    prop_oneof![(0u8..3).prop_map(Slot::Buffer), Just(Slot::OffChip)]
}

fn flags() -> impl Strategy<Value = Flags> {
    let role = prop::sample::select(vec![SeRole::None, SeRole::SeGap, SeRole::SeFc1, SeRole::SeFc2, SeRole::SeScale]);
    (any::<[bool; 6]>(), role).prop_map(|(b, se_role)| Flags {
        fused_pool: b[0],
        fused_eltwise: b[1],
        upsample: b[2],
        se_role,
        stage_input: b[3],
        stage_shortcut: b[4],
        spill: b[5],
    })
}

prop_compose! {
    fn instruction()(
        (opcode, kernel, stride, frame) in (kind(), any::<u8>(), any::<u8>(), any::<bool>()),
        dims in any::<[u16; 6]>(),
        (alloc_in, alloc_out, alloc_shortcut) in (slot(), slot(), prop::option::of(slot())),
        flags in flags(),
        addrs in any::<[u32; 4]>(),
        (activation, post_activation, quant_shift, eltwise_shift) in (act(), act(), any::<i8>(), any::<i8>()),
        (pool, split, terminal) in (any::<[u8; 3]>(), any::<u16>(), any::<bool>()),
    ) -> Instruction {
        let concat = opcode == LayerKind::Concat;
        Instruction {
            opcode, kernel, stride,
            scheme: if frame { Scheme::Frame } else { Scheme::Row },
            in_w: dims[0], in_h: dims[1], out_w: dims[2], out_h: dims[3], in_c: dims[4], out_c: dims[5],
            alloc_in, alloc_out, alloc_shortcut, flags,
            weight_addr: addrs[0], input_addr: addrs[1], output_addr: addrs[2], shortcut_addr: addrs[3],
            activation, post_activation, quant_shift, eltwise_shift,
            pool_kernel: if concat { 0 } else { pool[0] },
            pool_stride: if concat { 0 } else { pool[1] },
            upsample_factor: if concat { 0 } else { pool[2] },
            concat_split: if concat { split } else { 0 },
            terminal,
        }
    }
}

proptest! {
    #[test]
    fn decode_inverts_encode(ins in instruction()) {
        let w = ins.encode();
        prop_assert_eq!(Instruction::decode(&w).unwrap(), ins);
    }

    // any word vector that decodes re-encodes to itself, so decode is injective
    #[test]
    fn encode_inverts_decode(mut w in any::<[u32; WORDS]>(), op in 1u32..=10) {
        w[0] = (w[0] & 0x01FF_FF00) | op;
        w[4] &= 0x3_FFFF;
        w[9] &= 0x00FF_FF3F;
        w[10] &= 0x01FF_FFFF;
        if let Ok(ins) = Instruction::decode(&w) {
            prop_assert_eq!(ins.encode(), w);
        }
    }
}

fn slot_of(l: Loc) -> Option<u8> {
    l.buffer_id()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn instruction_buffers_match_assignment(model in 0usize..4, mask in any::<u64>()) {
        let b = match model {
            0 => zoo::resnet(50, 32),
            1 => zoo::efficientnet_b1(32),
            2 => zoo::synthetic_chain("c", (32, 32, 3), &[(16, 3, 1), (32, 3, 2), (32, 1, 1), (64, 3, 2)]),
            _ => zoo::yolov3(),
        };
        let s = Schedule::new(b.build().unwrap()).unwrap();
        let hw = HwConfig::default();
        let schemes: Vec<Scheme> =
            (0..s.blocks.len()).map(|i| if mask >> (i % 64) & 1 == 1 { Scheme::Frame } else { Scheme::Row }).collect();
        let (a, _, _) = assign_buffers_forcing(&s, &schemes, &hw).unwrap();
        let p = emit_instructions(&s, &a, &hw).unwrap();
        prop_assert_eq!(p.instructions.len(), a.groups.len());
        for (ins, ga) in p.instructions.iter().zip(&a.groups) {
            let (i, o, sc) = buffer_ids(ins);
            prop_assert_eq!(i, slot_of(ga.input));
            prop_assert_eq!(o, slot_of(ga.output));
            prop_assert_eq!(sc, ga.shortcut.and_then(slot_of));
            prop_assert_eq!(ins.scheme, ga.scheme);
        }
    }
}
