#include "mfc/hash.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <fstream>

#include "mfc/errors.hpp"

namespace mfc {

static std::string to_hex(const unsigned char* digest, unsigned len) {
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string sha256_hex(const void* data, size_t len) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned dlen = 0;
    if (EVP_Digest(data, len, digest, &dlen, EVP_sha256(), nullptr) != 1) {
        throw IoError("sha256: digest computation failed");
    }
    return to_hex(digest, dlen);
}

std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("sha256: cannot open " + path.string());
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        std::streamsize got = in.gcount();
        if (got > 0) EVP_DigestUpdate(ctx, buf, static_cast<size_t>(got));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned dlen = 0;
    EVP_DigestFinal_ex(ctx, digest, &dlen);
    EVP_MD_CTX_free(ctx);
    return to_hex(digest, dlen);
}

std::string sha256_dir(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::exists(dir)) throw IoError("sha256_dir: no such directory: " + dir.string());
    std::vector<std::string> rel_paths;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file()) {
            rel_paths.push_back(fs::relative(entry.path(), dir).generic_string());
        }
    }
    std::sort(rel_paths.begin(), rel_paths.end());
    std::string acc;
    for (const auto& rp : rel_paths) {
        acc += rp;
        acc += '\n';
        acc += sha256_file(dir / rp);
        acc += '\n';
    }
    return sha256_hex(acc);
}

}  // namespace mfc
