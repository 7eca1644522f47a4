import { describe, expect, it } from "vitest";

import { HeadLayer, HeadParams } from "../src/formats.js";
import { generateLayer, generateQNet, qnetForward } from "../src/reference.js";
import { makeRng, randomValues } from "./helpers.js";

function randomLayer(rng: () => number, h: number, d: number, m: number, r: number, t: number): HeadLayer {
  return {
    keyProj: randomValues(rng, (h + 1) * d, 1 / Math.sqrt(h + 1)),
    valueProj: randomValues(rng, (h + 1) * d, 1 / Math.sqrt(h + 1)),
    learnedQueries: randomValues(rng, m * d, 1),
    outProj: randomValues(rng, m * d * r * (t + 1), 1 / Math.sqrt(m * d)),
    base: randomValues(rng, r * (t + 1), 0.5),
    r,
    t,
  };
}

function randomHead(seed: number, h = 6, d = 5, m = 2, depth = 3): HeadParams {
  const rng = makeRng(seed);
  const layers: HeadLayer[] = [];
  for (let i = 0; i < depth; i++) {
    const last = i === depth - 1;
    layers.push(randomLayer(rng, h, d, m, last ? 1 : h, h));
  }
  return { h, d, m, layers };
}

describe("layer generation", () => {
  it("passes the base through exactly when the output projection is zero", () => {
    const rng = makeRng(21);
    const h = 5;
    const d = 4;
    const m = 3;
    const layer = randomLayer(rng, h, d, m, h, h);
    layer.outProj = new Float32Array(m * d * h * (h + 1));
    const tokens = randomValues(rng, 3 * h, 1);
    const generated = generateLayer(tokens, 3, h, layer, d, m);
    for (let i = 0; i < h; i++) {
      for (let j = 0; j < h; j++) {
        expect(generated.weights[i * h + j]).toBe(layer.base[i * (h + 1) + j]);
      }
      expect(generated.bias[i]).toBe(layer.base[i * (h + 1) + h]);
    }
  });

  it("is invariant to token order", () => {
    const rng = makeRng(33);
    const head = randomHead(34);
    const n = 4;
    const tokens = randomValues(rng, n * head.h, 1);
    // Rotate the rows by one.
    const rotated = new Float32Array(tokens.length);
    rotated.set(tokens.subarray(head.h), 0);
    rotated.set(tokens.subarray(0, head.h), (n - 1) * head.h);

    const a = generateQNet(tokens, n, head);
    const b = generateQNet(rotated, n, head);
    a.forEach((layer, li) => {
      for (let i = 0; i < layer.weights.length; i++) {
        expect(Math.abs(layer.weights[i] - b[li].weights[i])).toBeLessThanOrEqual(1e-6);
      }
      for (let i = 0; i < layer.bias.length; i++) {
        expect(Math.abs(layer.bias[i] - b[li].bias[i])).toBeLessThanOrEqual(1e-6);
      }
    });
  });

  it("produces hidden layers h x h and a final 1 x h layer", () => {
    const head = randomHead(55);
    const tokens = randomValues(makeRng(56), 2 * head.h, 1);
    const net = generateQNet(tokens, 2, head);
    expect(net.length).toBe(3);
    expect([net[0].rows, net[0].cols]).toEqual([head.h, head.h]);
    expect([net[1].rows, net[1].cols]).toEqual([head.h, head.h]);
    expect([net[2].rows, net[2].cols]).toEqual([1, head.h]);
  });

  it("rejects a token matrix of the wrong width", () => {
    const head = randomHead(77);
    expect(() => generateQNet(randomValues(makeRng(78), 3 * (head.h + 1), 1), 3, head)).toThrow(
      /does not match/,
    );
  });
});

describe("scoring network forward", () => {
  it("computes a plain inner product for a single linear layer", () => {
    const net = [
      {
        weights: new Float32Array([1, 2, -1]),
        bias: new Float32Array([0.5]),
        rows: 1,
        cols: 3,
      },
    ];
    expect(qnetForward(net, new Float32Array([2, 3, 4]))).toBeCloseTo(2 + 6 - 4 + 0.5, 6);
  });

  it("maps a zero-variance pre-activation row to the residual input alone", () => {
    // Weights zero, bias constant: ReLU output is constant, layer norm of a
    // constant row is exactly zero, so the block reduces to the identity.
    const h = 4;
    const hidden = {
      weights: new Float32Array(h * h),
      bias: new Float32Array(h).fill(2),
      rows: h,
      cols: h,
    };
    const out = {
      weights: new Float32Array([1, 1, 1, 1]),
      bias: new Float32Array([0]),
      rows: 1,
      cols: h,
    };
    const doc = new Float32Array([0.25, -0.5, 1, 2]);
    expect(qnetForward([hidden, out], doc)).toBeCloseTo(0.25 - 0.5 + 1 + 2, 6);
  });

  it("rejects shape mismatches", () => {
    const head = randomHead(91);
    const tokens = randomValues(makeRng(92), 2 * head.h, 1);
    const net = generateQNet(tokens, 2, head);
    expect(() => qnetForward(net, new Float32Array(head.h + 1))).toThrow(/hidden layer/);
    expect(() => qnetForward([], new Float32Array(4))).toThrow(/at least one/);
  });
});
