// Grade a handful of model outputs and print the accuracy / tokens / TE table.

#include <iostream>

#include "crisp/metrics.hpp"

int main() {
    using namespace crisp;
    struct Item {
        const char* id;
        const char* text;
        const char* truth;
    };
    const Item items[] = {
        {"a", "<think>2 + 2 = 4.</think>\n\nSo \\boxed{4}.", "4"},
        {"b", "<think>Half of 4 is 2, over 3.</think>\n\n\\boxed{\\dfrac{2}{3}}", "2/3"},
        {"c", "<think>Guessing.</think>\n\n\\boxed{7}", "8"},
        {"d", "<think>Still working on it", "10"},
    };
    auto count_words = [](const std::string& s) { return words(s).size(); };

    std::vector<EvalRecord> records;
    for (const auto& it : items) {
        records.push_back(grade(it.id, it.text, it.truth, count_words));
        const auto& r = records.back();
        std::cout << r.id << ": " << (r.correct ? "correct" : "wrong") << (r.truncated ? " (truncated)" : "") << ", "
                  << r.token_count << " tokens, " << r.n_steps << " steps\n";
    }
    std::cout << '\n' << format_report_table({{"demo", report(records)}});
}
