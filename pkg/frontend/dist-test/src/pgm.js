/** Decode a binary PGM (P5, maxval 255) payload. */
export function decodePgm(buffer) {
    const bytes = new Uint8Array(buffer);
    if (bytes[0] !== 0x50 || bytes[1] !== 0x35) {
        throw new Error("not a binary PGM (P5) payload");
    }
    // header: "P5" <ws> width <ws> height <ws> maxval <single ws> raster
    let pos = 2;
    const fields = [];
    while (fields.length < 3) {
        while (pos < bytes.length && isSpace(bytes[pos]))
            pos++;
        if (bytes[pos] === 0x23) { // '#' comment
            while (pos < bytes.length && bytes[pos] !== 0x0a)
                pos++;
            continue;
        }
        let start = pos;
        while (pos < bytes.length && !isSpace(bytes[pos]))
            pos++;
        fields.push(parseInt(ascii(bytes, start, pos), 10));
    }
    pos++; // the single whitespace after maxval
    const [width, height, maxval] = fields;
    if (maxval !== 255) {
        throw new Error(`unsupported PGM maxval ${maxval}`);
    }
    const pixels = bytes.slice(pos, pos + width * height);
    if (pixels.length !== width * height) {
        throw new Error("truncated PGM raster");
    }
    return { width, height, pixels };
}
function isSpace(b) {
    return b === 0x20 || b === 0x09 || b === 0x0a || b === 0x0d;
}
function ascii(bytes, start, end) {
    let out = "";
    for (let i = start; i < end; i++)
        out += String.fromCharCode(bytes[i]);
    return out;
}
