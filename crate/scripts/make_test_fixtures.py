"""Builds the tiny randomly initialised encoder and seq2seq checkpoints under
crates/core/tests/fixtures and records reference outputs computed with
Hugging Face transformers. The Rust model code is tested against these.

Usage: python scripts/make_test_fixtures.py
"""

import json
import os
from pathlib import Path

import torch
from tokenizers import Tokenizer, models, pre_tokenizers, processors
from transformers import BertConfig, BertModel, MPNetConfig, MPNetModel, T5Config, T5ForConditionalGeneration

OUT = Path(__file__).resolve().parent.parent / "crates" / "core" / "tests" / "fixtures"

WORDS = (
    "the a of in on is was and to river town founded reef coast northern heart failure "
    "rates rose claim evidence summarize : . , market known for lies located"
).split()

TEXTS = [
    "the reef lies on the northern coast .",
    "heart failure rates rose",
    "a town",
    "the town was founded on the river , and is known for the market .",
]


def word_tokenizer(specials, bos=None, eos=None):
    vocab = {tok: i for i, tok in enumerate(specials)}
    for w in WORDS:
        vocab.setdefault(w, len(vocab))
    unk = specials[2] if len(specials) > 2 else specials[-1]
    tok = Tokenizer(models.WordLevel(vocab=vocab, unk_token=unk))
    tok.pre_tokenizer = pre_tokenizers.Whitespace()
    if bos is not None:
        tok.post_processor = processors.TemplateProcessing(
            single=f"{bos} $A {eos}", special_tokens=[(bos, vocab[bos]), (eos, vocab[eos])]
        )
    elif eos is not None:
        tok.post_processor = processors.TemplateProcessing(single=f"$A {eos}", special_tokens=[(eos, vocab[eos])])
    return tok, vocab


def mean_pool(model, tok, pad_id):
    encs = [tok.encode(t).ids for t in TEXTS]
    width = max(map(len, encs))
    ids = torch.tensor([e + [pad_id] * (width - len(e)) for e in encs])
    mask = torch.tensor([[1] * len(e) + [0] * (width - len(e)) for e in encs])
    with torch.no_grad():
        hidden = model(input_ids=ids, attention_mask=mask).last_hidden_state
    m = mask.unsqueeze(-1).float()
    pooled = (hidden * m).sum(1) / m.sum(1).clamp(min=1e-9)
    return [e for e in encs], pooled.tolist()


def sentence_files(d, max_len):
    (d / "1_Pooling").mkdir(exist_ok=True)
    (d / "sentence_bert_config.json").write_text(json.dumps({"max_seq_length": max_len, "do_lower_case": False}))
    (d / "1_Pooling" / "config.json").write_text(json.dumps({"pooling_mode_mean_tokens": True, "pooling_mode_cls_token": False}))


def bert(ref):
    d = OUT / "bert_tiny"
    d.mkdir(parents=True, exist_ok=True)
    tok, vocab = word_tokenizer(["[PAD]", "[CLS]", "[UNK]", "[SEP]"], bos="[CLS]", eos="[SEP]")
    tok.save(str(d / "tokenizer.json"))
    torch.manual_seed(1)
    cfg = BertConfig(vocab_size=len(vocab), hidden_size=32, num_hidden_layers=2, num_attention_heads=4,
                     intermediate_size=64, max_position_embeddings=64, pad_token_id=0)
    model = BertModel(cfg, add_pooling_layer=False).eval()
    model.save_pretrained(d, safe_serialization=True)
    sentence_files(d, 32)
    ids, emb = mean_pool(model, tok, 0)
    ref["bert_tiny"] = {"texts": TEXTS, "ids": ids, "embeddings": emb}


def mpnet(ref):
    d = OUT / "mpnet_tiny"
    d.mkdir(parents=True, exist_ok=True)
    tok, vocab = word_tokenizer(["<s>", "<pad>", "<unk>", "</s>"], bos="<s>", eos="</s>")
    tok.save(str(d / "tokenizer.json"))
    torch.manual_seed(2)
    cfg = MPNetConfig(vocab_size=len(vocab), hidden_size=32, num_hidden_layers=2, num_attention_heads=4,
                      intermediate_size=64, max_position_embeddings=66, relative_attention_num_buckets=32,
                      pad_token_id=1, bos_token_id=0, eos_token_id=3)
    model = MPNetModel(cfg, add_pooling_layer=False).eval()
    model.save_pretrained(d, safe_serialization=True)
    sentence_files(d, 32)
    ids, emb = mean_pool(model, tok, 1)
    ref["mpnet_tiny"] = {"texts": TEXTS, "ids": ids, "embeddings": emb}


def t5(ref):
    d = OUT / "t5_tiny"
    d.mkdir(parents=True, exist_ok=True)
    tok, vocab = word_tokenizer(["<pad>", "</s>", "<unk>"], eos="</s>")
    tok.save(str(d / "tokenizer.json"))
    torch.manual_seed(3)
    cfg = T5Config(vocab_size=len(vocab), d_model=32, d_kv=8, d_ff=64, num_layers=2, num_decoder_layers=2,
                   num_heads=4, relative_attention_num_buckets=32, relative_attention_max_distance=128,
                   dropout_rate=0.0, feed_forward_proj="relu", tie_word_embeddings=True,
                   decoder_start_token_id=0, pad_token_id=0, eos_token_id=1)
    model = T5ForConditionalGeneration(cfg)

    sources = ["summarize : " + TEXTS[0], "summarize : " + TEXTS[1]]
    targets = [TEXTS[1], TEXTS[3]]
    src = [tok.encode(s).ids for s in sources]
    tgt = [tok.encode(t).ids for t in targets]
    sw, tw = max(map(len, src)), max(map(len, tgt))
    input_ids = torch.tensor([s + [0] * (sw - len(s)) for s in src])
    attn = (input_ids != 0).long()
    labels = torch.tensor([t + [-100] * (tw - len(t)) for t in tgt])

    # A few hundred steps on the two pairs so that greedy decoding emits
    # the targets and stops at the end token instead of repeating.
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=1e-2)
    for _ in range(300):
        opt.zero_grad()
        model(input_ids=input_ids, attention_mask=attn, labels=labels).loss.backward()
        opt.step()
    model.eval()
    model.save_pretrained(d, safe_serialization=True)
    # Second target truncated so the loss and gradients are not ~0.
    labels = torch.tensor([tgt[0][:3] + [2, 1] + [-100] * (tw - 5), tgt[1]])

    model.zero_grad()
    out = model(input_ids=input_ids, attention_mask=attn, labels=labels)
    out.loss.backward()
    q = model.encoder.block[0].layer[0].SelfAttention.q.weight.grad
    wo = model.decoder.block[1].layer[2].DenseReluDense.wo.weight.grad
    shared = model.shared.weight.grad

    with torch.no_grad():
        gen = model.generate(input_ids=input_ids, attention_mask=attn, max_new_tokens=12,
                             num_beams=1, do_sample=False)
    ref["t5_tiny"] = {
        "source_ids": src,
        "target_ids": tgt,
        "label_ids": [[x for x in row if x != -100] for row in labels.tolist()],
        "loss": out.loss.item(),
        "logits_first_row": out.logits[0, 0].tolist(),
        "grad_sq_encoder_q0": (q ** 2).sum().item(),
        "grad_sq_decoder_wo1": (wo ** 2).sum().item(),
        "grad_sq_shared": (shared ** 2).sum().item(),
        "greedy_ids": [g[1:].tolist() for g in gen],
        "num_parameters": sum(p.numel() for p in model.parameters()),
    }


def main():
    ref = {}
    bert(ref)
    mpnet(ref)
    t5(ref)
    (OUT / "reference_outputs.json").write_text(json.dumps(ref, indent=1) + "\n")


if __name__ == "__main__":
    main()
