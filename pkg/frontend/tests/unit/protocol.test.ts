import { describe, expect, it } from "vitest";

import {
  configMessage,
  floatToPcm16,
  parseServerMessage,
  resetConfigMessage,
  startMessage,
} from "../../src/protocol.js";

describe("parseServerMessage", () => {
  it("parses each server message type", () => {
    expect(parseServerMessage(
      '{"type":"event","class":"pop","t_ms":90}',
    )).toMatchObject({ type: "event", class: "pop", t_ms: 90 });
    expect(parseServerMessage(
      '{"type":"probs","t_ms":100,"top_k":[],"p_background":0.1,"p_speech":0}',
    ).type).toBe("probs");
    expect(parseServerMessage('{"type":"error","message":"x"}').type).toBe("error");
  });

  it("rejects non-JSON, unknown types, and malformed payloads", () => {
    expect(() => parseServerMessage("nope")).toThrow(/not JSON/);
    expect(() => parseServerMessage('{"type":"launch"}')).toThrow(/unknown/);
    expect(() => parseServerMessage('{"type":"event","class":3}')).toThrow(/malformed/);
    expect(() => parseServerMessage('{"type":"ack"}')).toThrow(/malformed/);
    expect(() => parseServerMessage('"just a string"')).toThrow(/not an object/);
  });
});

describe("client messages", () => {
  it("start declares the exact PCM format", () => {
    expect(JSON.parse(startMessage())).toEqual({
      type: "start",
      format: { encoding: "pcm_s16le", rate: 16000, channels: 1 },
    });
  });

  it("config carries only the provided fields", () => {
    expect(JSON.parse(configMessage("pop", { theta: 0.6 }))).toEqual({
      type: "config", class: "pop", theta: 0.6,
    });
    expect(JSON.parse(configMessage("pop", { theta: 0.6, tau: 7 }))).toEqual({
      type: "config", class: "pop", theta: 0.6, tau: 7,
    });
    expect(JSON.parse(resetConfigMessage())).toEqual({ type: "reset_config" });
  });
});

describe("floatToPcm16", () => {
  it("encodes little-endian 16-bit with clipping", () => {
    const bytes = floatToPcm16(new Float32Array([0, 1, -1, 2, -2, 0.5]));
    const view = new Int16Array(bytes.buffer);
    expect(Array.from(view)).toEqual([0, 32767, -32767, 32767, -32767, 16384]);
    // explicit byte order check: 32767 -> ff 7f
    expect(bytes[2]).toBe(0xff);
    expect(bytes[3]).toBe(0x7f);
  });

  it("round-trips sample counts", () => {
    expect(floatToPcm16(new Float32Array(160)).length).toBe(320);
    expect(floatToPcm16(new Float32Array(0)).length).toBe(0);
  });
});
