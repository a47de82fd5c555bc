"""Regenerates the frozen reference values under tests/data.

Every value here comes from an implementation independent of the C++ code:
the Hugging Face BERT tokenizer and model, torchvision's VGG layer builder,
torch's bilinear interpolation, torch.optim.Adam and plain Python float
arithmetic. Run from the repository root:

    python3 tests/oracles/make_goldens.py
"""

import json
import math
import os
import unicodedata

import numpy as np
import torch
import torch.nn.functional as F
from safetensors.torch import save_file
from torchvision.models.vgg import make_layers
from transformers import BertConfig, BertModel, BertTokenizer

DATA = os.path.join(os.path.dirname(__file__), "..", "data")
torch.manual_seed(1234)
rng = np.random.default_rng(1234)


def dump(name, obj):
    with open(os.path.join(DATA, name), "w") as f:
        json.dump(obj, f, indent=1, ensure_ascii=False)
        f.write("\n")


# ---------------------------------------------------------------------------
# Vocabulary shared by the tokenizer and tiny encoder goldens.

specials = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
words = ["troll", "meme", "padam", "super", "star", "vera", "level", "thala",
         "naan", "sema", "mass", "the", "is", "a", "café", "ஆ", "தமிழ்",
         "hello", "world", "un", "aff", "able", "##aff", "##able", "##ing",
         "##s", "##star", "##level", "##ll", "##ro", "##er", "##é"]
chars = [chr(c) for c in range(33, 127)]
pieces = ["##" + c for c in "abcdefghijklmnopqrstuvwxyz0123456789"]
vocab = specials + words + [c for c in chars if c not in words] + pieces
vocab = list(dict.fromkeys(vocab))
with open(os.path.join(DATA, "oracle_vocab.txt"), "w") as f:
    f.write("\n".join(vocab) + "\n")

tokenizer = BertTokenizer(os.path.join(DATA, "oracle_vocab.txt"), do_lower_case=False)

texts = [
    "troll meme",
    "Vera level thala mass!!",
    "padam superstar",
    "café",
    "café au lait",           # decomposed accent; NFC composes it
    "  spaced\t\tout \n text  ",
    "தமிழ் meme",
    "unaffable",
    "emoji 😀 here",
    "中文字 mixed",
    "ctrl\u0007char and zero​width",
    "averyveryveryverylongwordthatkeepsgoing",
    "",
    "a b c d e f g h i j k l m n o p q r s t u v",
    "Sema-mass, naan?",
]


def collapse(text):
    text = unicodedata.normalize("NFC", text)
    return " ".join(text.split())


golden = []
for t in texts:
    enc = tokenizer(collapse(t), max_length=16, truncation=True, padding="max_length")
    golden.append({"text": t, "tokens": tokenizer.tokenize(collapse(t)),
                   "ids": enc["input_ids"], "mask": enc["attention_mask"]})
dump("tokenizer_golden.json", {"max_len": 16, "cases": golden})

# ---------------------------------------------------------------------------
# Tiny BERT: same wiring as the full-size encoder, small widths.

config = BertConfig(vocab_size=len(vocab), hidden_size=32, num_hidden_layers=2,
                    num_attention_heads=4, intermediate_size=64,
                    max_position_embeddings=32, type_vocab_size=2,
                    hidden_dropout_prob=0.0, attention_probs_dropout_prob=0.0,
                    hidden_act="gelu", layer_norm_eps=1e-12)
model = BertModel(config, add_pooling_layer=False).eval()
with torch.no_grad():
    for p in model.parameters():
        p.add_(0.05 * torch.randn_like(p))  # move LayerNorm/bias off 1/0
bert_dir = os.path.join(DATA, "tiny_bert")
os.makedirs(bert_dir, exist_ok=True)
save_file({k: v.contiguous() for k, v in model.state_dict().items()},
          os.path.join(bert_dir, "model.safetensors"))
cfg = config.to_dict()
with open(os.path.join(bert_dir, "config.json"), "w") as f:
    json.dump({k: cfg[k] for k in ["vocab_size", "hidden_size", "num_hidden_layers",
                                   "num_attention_heads", "intermediate_size",
                                   "max_position_embeddings", "type_vocab_size",
                                   "hidden_dropout_prob", "attention_probs_dropout_prob",
                                   "hidden_act", "layer_norm_eps"]}, f, indent=1)
with open(os.path.join(bert_dir, "vocab.txt"), "w") as f:
    f.write("\n".join(vocab) + "\n")

grad_names = ["embeddings.position_embeddings.weight", "embeddings.LayerNorm.weight",
              "encoder.layer.0.attention.self.query.weight",
              "encoder.layer.0.attention.self.key.bias",
              "encoder.layer.1.intermediate.dense.weight",
              "encoder.layer.1.output.LayerNorm.bias"]
text_cases = []
for t in texts[:6]:
    enc = tokenizer(collapse(t), max_length=16, truncation=True, padding="max_length",
                    return_tensors="pt")
    ids, mask = enc["input_ids"], enc["attention_mask"]
    out = model(input_ids=ids, attention_mask=mask).last_hidden_state[0]
    m = mask[0].bool()
    cls = out[0]
    mean = out[m].mean(dim=0)
    direction = torch.tensor(rng.standard_normal(32), dtype=torch.float32)
    model.zero_grad()
    (cls * direction).sum().backward()
    params = dict(model.named_parameters())
    grads = {n: params[n].grad.flatten().tolist() for n in grad_names}
    text_cases.append({"ids": ids[0].tolist(), "mask": mask[0].tolist(),
                       "cls": cls.tolist(), "mean": mean.tolist(),
                       "direction": direction.tolist(), "grads": grads})
dump("text_encoder_golden.json", {"cases": text_cases})

# ---------------------------------------------------------------------------
# Image side: bilinear resize + normalization, then a small VGG-style stack.

mean = torch.tensor([0.485, 0.456, 0.406]).view(3, 1, 1)
std = torch.tensor([0.229, 0.224, 0.225]).view(3, 1, 1)

import cv2  # noqa: E402  (only for writing the PNG fixture)

src = rng.integers(0, 256, size=(37, 50, 3), dtype=np.uint8)  # RGB
cv2.imwrite(os.path.join(DATA, "oracle_image.png"), src[:, :, ::-1].copy())
rgb = torch.tensor(src, dtype=torch.float32).permute(2, 0, 1) / 255.0


def prepare(size, flip=False, dtype=torch.float32):
    img = torch.tensor(src, dtype=dtype).permute(2, 0, 1) / 255.0
    x = F.interpolate(img[None], size=(size, size), mode="bilinear",
                      align_corners=False, antialias=False)[0]
    if flip:
        x = torch.flip(x, dims=[2])
    return (x - mean.to(dtype)) / std.to(dtype)


resize_cases = []
for size, flip in [(32, False), (96, False), (64, True)]:
    x = prepare(size, flip, torch.float64)
    resize_cases.append({"size": size, "flip": flip, "data": x.flatten().tolist()})
dump("resize_golden.json", {"image": "oracle_image.png", "cases": resize_cases})

layout = [8, 8, 0, 16, 0, 16, 0]
features = make_layers([("M" if c == 0 else c) for c in layout])
with torch.no_grad():
    for p in features.parameters():
        p.copy_(0.2 * torch.randn_like(p))
projection = torch.nn.Linear(16, 256)
with torch.no_grad():
    projection.weight.copy_(0.3 * torch.randn_like(projection.weight))
    projection.bias.copy_(0.1 * torch.randn_like(projection.bias))
vgg_dir = os.path.join(DATA, "tiny_vgg")
os.makedirs(vgg_dir, exist_ok=True)
tensors = {"features." + k: v.contiguous() for k, v in features.state_dict().items()}
tensors["projection.weight"] = projection.weight.detach().contiguous()
tensors["projection.bias"] = projection.bias.detach().contiguous()
save_file(tensors, os.path.join(vgg_dir, "model.safetensors"))
with open(os.path.join(vgg_dir, "config.json"), "w") as f:
    json.dump({"architecture": "vgg16", "layout": layout}, f)

x = prepare(32)[None].requires_grad_(False)
feat = features(x)
pooled = feat.mean(dim=(2, 3))[0]
emb = projection(pooled)
direction = torch.tensor(rng.standard_normal(256), dtype=torch.float32)
features.zero_grad()
projection.zero_grad()
(emb * direction).sum().backward()
named = {"features." + k: v for k, v in features.named_parameters()}
named.update({"projection." + k: v for k, v in projection.named_parameters()})
dump("image_encoder_golden.json", {
    "image": "oracle_image.png", "size": 32, "layout": layout,
    "backbone": pooled.tolist(), "embedding": emb.tolist(),
    "direction": direction.tolist(),
    "grads": {n: named[n].grad.flatten().tolist()
              for n in ["features.0.weight", "features.5.bias", "features.8.weight",
                        "projection.weight", "projection.bias"]}})

# ---------------------------------------------------------------------------
# Adam trajectory on a fixed quadratic, and scalar loss values.

w = torch.tensor([1.0, -2.0, 0.5, 3.0], dtype=torch.float64, requires_grad=True)
target = torch.tensor([0.3, 0.1, -0.7, 2.0], dtype=torch.float64)
opt = torch.optim.Adam([w], lr=0.05, betas=(0.9, 0.999), eps=1e-8)
trajectory = []
for _ in range(25):
    opt.zero_grad()
    loss = ((w - target) ** 2 * torch.tensor([1.0, 4.0, 0.5, 2.0], dtype=torch.float64)).sum()
    loss.backward()
    opt.step()
    trajectory.append(w.detach().tolist())
dump("adam_golden.json", {"start": [1.0, -2.0, 0.5, 3.0], "target": target.tolist(),
                          "scale": [1.0, 4.0, 0.5, 2.0], "lr": 0.05,
                          "trajectory": trajectory})

dump("scalar_golden.json", {
    "bce_half_troll": math.log(2.0),
    "bce_09_02": -(math.log(0.9) + math.log(0.8)) / 2.0,
    "logit_sigmoid_04": math.log(0.4 / 0.6),
    "baseline_accuracy_395_667": 395.0 / 667.0,
    "baseline_f1_troll": 2 * 395.0 / (2 * 395.0 + 272.0),
})
print("goldens written to", os.path.abspath(DATA))
