#!/usr/bin/env python3
"""Convert pretrained encoders into the directory layout memefusion loads.

  text:  config.json + vocab.txt + model.safetensors from a Hugging Face BERT
  image: config.json + model.safetensors holding torchvision VGG16 `features`
"""
import argparse
import json
import os
import sys


def export_text(source, out):
    from safetensors.torch import save_file
    from transformers import AutoModel, AutoTokenizer

    model = AutoModel.from_pretrained(source)
    tokenizer = AutoTokenizer.from_pretrained(source)
    os.makedirs(out, exist_ok=True)
    model.config.to_json_file(os.path.join(out, "config.json"))
    vocab = tokenizer.get_vocab()
    with open(os.path.join(out, "vocab.txt"), "w", encoding="utf-8") as f:
        for token, _ in sorted(vocab.items(), key=lambda kv: kv[1]):
            f.write(token + "\n")
    tensors = {k: v.contiguous() for k, v in model.state_dict().items()
               if not k.startswith("pooler.") and k != "embeddings.position_ids"}
    save_file(tensors, os.path.join(out, "model.safetensors"))


def export_image(weights, out):
    import torchvision
    from safetensors.torch import save_file

    if weights == "none":
        model = torchvision.models.vgg16(weights=None)
    else:
        model = torchvision.models.vgg16(weights=torchvision.models.VGG16_Weights.DEFAULT)
    os.makedirs(out, exist_ok=True)
    tensors = {"features." + k: v.contiguous() for k, v in model.features.state_dict().items()}
    save_file(tensors, os.path.join(out, "model.safetensors"))
    with open(os.path.join(out, "config.json"), "w") as f:
        json.dump({"architecture": "vgg16"}, f)


def main(argv):
    parser = argparse.ArgumentParser(description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    text = sub.add_parser("text", help="export a BERT-family text encoder")
    text.add_argument("--model", default="google/muril-base-cased",
                      help="hub id or local directory")
    text.add_argument("--out", required=True)
    image = sub.add_parser("image", help="export the VGG16 convolutional backbone")
    image.add_argument("--weights", choices=["imagenet", "none"], default="imagenet",
                       help="'none' writes randomly initialised weights")
    image.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    if args.command == "text":
        export_text(args.model, args.out)
    else:
        export_image(args.weights, args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
