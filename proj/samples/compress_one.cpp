// Segment one generation, score its steps and run the gated compression
// search against the synthetic backend, printing every decision.
//
//   compress_one [synthetic_spec.json]

#include <fstream>
#include <iostream>

#include "crisp/compressor.hpp"
#include "crisp/saliency.hpp"
#include "crisp/synthetic_oracle.hpp"

int main(int argc, char** argv) {
    using namespace crisp;
    SyntheticSpec spec;
    if (argc > 1) {
        std::ifstream in(argv[1]);
        spec = synthetic_spec_from_json(json::parse(in));
    } else {
        spec.rules = {{"product", 1.5}, {"sum", 1.5}, {"total", 1.0}};
    }
    SyntheticOracle oracle(spec);

    ReasoningTrace trace = segment_chain(
        "<think>Okay, so let me think about this for a moment.\n\n"
        "First multiply 23 by 5 to get the product 115.\n\n"
        "The product 115 is the number of items in the boxes.\n\n"
        "Hmm, wait, let me see.\n\n"
        "Then the total is the sum 115 + 4 = 119.\n\n"
        "Then the total is the sum 115 + 4 = 119, yes.\n\n"
        "Alright.</think>\n\n"
        "The total is \\boxed{119}.");
    trace.id = "demo";
    trace.query = "A shop packs 23 items into each of 5 boxes and has 4 loose items. How many items in total?";
    trace.instruction = std::string(kStandardInstruction);
    fill_token_spans(trace, oracle);

    auto profile = make_profile(trace, oracle.attention(trace));
    std::cout << "thresholds: low " << profile.tau_low << ", high " << profile.tau_high << "\n\n";

    auto result = compress(trace, profile, SearchConfig{}, oracle);
    for (const auto& rec : result.action_log) {
        std::cout << "step " << rec.step_index << "  score " << rec.score << "  ->  " << to_string(rec.chosen);
        for (const auto& [a, r] : rec.candidate_rewards) std::cout << "  " << to_string(a) << "=" << r;
        std::cout << "\n    \"" << rec.output_text << "\"\n";
    }
    std::cout << "\ntokens " << result.original_tokens << " -> " << result.compressed_tokens << "\n";
}
