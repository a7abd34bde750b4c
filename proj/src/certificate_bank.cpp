#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "usdqrng/certifier.hpp"
#include "usdqrng/errors.hpp"

// Record layout:
//
//   certificate
//   solver <text>
//   delta <d>
//   p_x1 <p>
//   nu <nu00> <nu01> <nu10> <nu11> <nuI0> <nuI1>
//   h <l0> <l1> <a> <d> <re c> <im c>      (four lines, H = [[a, c], [conj(c), d]])
//   residual <largest constraint eigenvalue at save time>
//   end
//
// Numbers are written with 17 significant digits; "inf" marks an unbounded coefficient.
//
// '#' starts a comment line.

namespace usdqrng {

namespace {

void write_one(std::ostream& out, const DualCertificate& c) {
    out << "certificate\n";
    out << "solver " << c.solver << '\n';
    out << "delta " << c.delta << '\n';
    out << "p_x1 " << c.p_x1 << '\n';
    out << "nu";
    for (const auto& r : c.nu)
        for (const double v : r) out << ' ' << v;
    out << '\n';
    for (int l0 = 0; l0 < 2; ++l0)
        for (int l1 = 0; l1 < 2; ++l1) {
            out << "h " << l0 << ' ' << l1;
            const auto& h = c.h[static_cast<std::size_t>(l0)][static_cast<std::size_t>(l1)];
            out << ' ' << h(0, 0).real() << ' ' << h(1, 1).real() << ' ' << h(0, 1).real() << ' ' << h(0, 1).imag()
                << '\n';
        }
    out << "residual " << c.residual << '\n';
    out << "end\n";
}

// operator>> does not accept "inf", which marks unbounded coefficients.
bool read_number(std::istream& in, double& v) {
    std::string tok;
    if (!(in >> tok)) return false;
    char* end = nullptr;
    v = std::strtod(tok.c_str(), &end);
    return end == tok.c_str() + tok.size();
}

[[noreturn]] void bad(std::size_t line, const std::string& msg) {
    throw FormatError("certificate bank line " + std::to_string(line) + ": " + msg);
}

}  // namespace

void write_certificate_bank(std::ostream& out, std::span<const DualCertificate> bank) {
    const auto flags = out.flags();
    const auto prec = out.precision();
    out << std::setprecision(17);
    out << "# usdqrng certificate bank\n";
    for (const auto& c : bank) write_one(out, c);
    out.flags(flags);
    out.precision(prec);
}

std::vector<DualCertificate> read_certificate_bank(std::istream& in) {
    std::vector<DualCertificate> bank;
    std::string line;
    std::size_t lineno = 0;
    bool open = false;
    DualCertificate cur;
    int h_seen = 0;
    bool have_delta = false, have_px = false, have_nu = false;

    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "certificate") {
            if (open) bad(lineno, "nested certificate");
            open = true;
            cur = DualCertificate{};
            h_seen = 0;
            have_delta = have_px = have_nu = false;
            continue;
        }
        if (!open) bad(lineno, "expected 'certificate'");
        if (key == "solver") {
            std::getline(ls >> std::ws, cur.solver);
        } else if (key == "delta") {
            if (!read_number(ls, cur.delta)) bad(lineno, "malformed delta");
            have_delta = true;
        } else if (key == "p_x1") {
            if (!read_number(ls, cur.p_x1)) bad(lineno, "malformed p_x1");
            have_px = true;
        } else if (key == "nu") {
            for (auto& r : cur.nu)
                for (double& v : r)
                    if (!read_number(ls, v)) bad(lineno, "nu needs six numbers");
            have_nu = true;
        } else if (key == "h") {
            int l0 = -1, l1 = -1;
            if (!(ls >> l0 >> l1) || l0 < 0 || l0 > 1 || l1 < 0 || l1 > 1) bad(lineno, "bad strategy label");
            auto& h = cur.h[static_cast<std::size_t>(l0)][static_cast<std::size_t>(l1)];
            double a = 0.0, d = 0.0, re = 0.0, im = 0.0;
            if (!read_number(ls, a) || !read_number(ls, d) || !read_number(ls, re) || !read_number(ls, im))
                bad(lineno, "h needs four numbers");
            h(0, 0) = a;
            h(1, 1) = d;
            h(0, 1) = {re, im};
            h(1, 0) = {re, -im};
            h_seen |= 1 << (2 * l0 + l1);
        } else if (key == "residual") {
            double ignored = 0.0;
            if (!read_number(ls, ignored)) bad(lineno, "malformed residual");
        } else if (key == "end") {
            if (!have_delta || !have_px || !have_nu || h_seen != 0xF) bad(lineno, "incomplete certificate");
            const auto report = verify_certificate(cur);
            if (!report.accepted)
                bad(lineno, "certificate fails verification (max eigenvalue " +
                                std::to_string(report.max_eigenvalue) + ")");
            // The stored residual is informational; the value kept is the one re-verified here.
            cur.residual = report.max_eigenvalue;
            bank.push_back(cur);
            open = false;
        } else {
            bad(lineno, "unknown key '" + key + "'");
        }
    }
    if (open) bad(lineno, "unterminated certificate");
    return bank;
}

void save_certificate_bank(const std::string& path, std::span<const DualCertificate> bank) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    write_certificate_bank(out, bank);
    if (!out) throw IoError("write failed for " + path);
}

std::vector<DualCertificate> load_certificate_bank(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return read_certificate_bank(in);
}

}  // namespace usdqrng
