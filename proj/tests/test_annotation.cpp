#include <gtest/gtest.h>

#include <atomic>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "aspectcheck/annotation.hpp"
#include "test_support.hpp"

using namespace aspectcheck;

namespace {

const CriteriaCatalog& catalog() {
    static const auto c = CriteriaCatalog::load(test_support::data_path("criteria.json"));
    return c;
}

std::vector<AnnotationPair> pairs(std::size_t per_kind) {
    std::vector<AnnotationPair> out;
    for (auto k : kAllPerturbationKinds)
        for (std::size_t s = 0; s < per_kind; ++s) {
            std::string id = "s" + std::to_string(s);
            out.push_back({{id, k}, "source " + id, "original " + id, "perturbed " + id + " " + std::string(to_string(k))});
        }
    return out;
}

std::vector<std::string> annotators(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back("ann" + std::to_string(i));
    return out;
}

Criterion crit(Aspect a, DescriptionKind k) { return catalog().at({a, k}); }

AssignmentPlan small_plan(std::uint64_t seed = 1) {
    std::vector<AnnotationPair> ps = {{{"s0", PerturbationKind::Negation}, "src", "orig text", "pert text"},
                                      {{"s1", PerturbationKind::Negation}, "src1", "orig1", "pert1"}};
    return build_plan(ps, {crit(Aspect::Fluency, DescriptionKind::detailed()), crit(Aspect::Coherence, DescriptionKind::term())},
                      annotators(2), {1, seed});
}

int counter_clock_value = 0;
AnnotationService::Clock fixed_clock() {
    return [] { return "2024-05-01T00:00:" + std::to_string(10 + counter_clock_value++ % 50) + "Z"; };
}

}  // namespace

TEST(Plan, FullWorkload) {
    auto plan = build_plan(pairs(4), catalog().entries(), annotators(40), {4, 7});
    EXPECT_EQ(plan.size(), 23040u);
    EXPECT_EQ(count_plan_violations(plan), 0u);
    std::map<std::pair<std::size_t, std::size_t>, std::set<std::size_t>> groups_per_item;
    std::map<std::string, std::size_t> load;
    for (const auto& a : plan.assignments) {
        EXPECT_TRUE((groups_per_item[{a.pair, a.criterion}].insert(a.group).second));
        ++load[a.annotator_id];
    }
    for (const auto& [item, gs] : groups_per_item) EXPECT_EQ(gs.size(), 4u);
    std::size_t lo = SIZE_MAX, hi = 0;
    for (const auto& [id, n] : load) {
        lo = std::min(lo, n);
        hi = std::max(hi, n);
    }
    EXPECT_EQ(load.size(), 40u);
    EXPECT_LE(hi - lo, pairs(4).size());  // at most one criterion's worth apart
}

TEST(Plan, SmallAndInfeasible) {
    auto one = build_plan({pairs(1)[0]}, {crit(Aspect::Fluency, DescriptionKind::detailed())}, annotators(4), {4, 0});
    EXPECT_EQ(one.size(), 4u);
    try {
        build_plan({pairs(1)[0]}, {crit(Aspect::Fluency, DescriptionKind::detailed()), crit(Aspect::Fluency, DescriptionKind::term())},
                   annotators(1), {1, 0});
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("Flu."), std::string::npos);
    }
    EXPECT_THROW(build_plan(pairs(1), catalog().entries(), annotators(5), {4, 0}), ValidationError);
    EXPECT_THROW(build_plan(pairs(1), {}, annotators(4), {4, 0}), ValidationError);
}

TEST(Plan, DeterministicPerSeed) {
    auto a = plan_to_jsonl(build_plan(pairs(1), catalog().entries(), annotators(40), {4, 3}));
    auto b = plan_to_jsonl(build_plan(pairs(1), catalog().entries(), annotators(40), {4, 3}));
    auto c = plan_to_jsonl(build_plan(pairs(1), catalog().entries(), annotators(40), {4, 4}));
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
}

TEST(Canonicalize, InvolutionAndFlip) {
    for (auto o : {Orientation::OriginalLeft, Orientation::OriginalRight})
        for (auto c : {Choice::A, Choice::B, Choice::C, Choice::D}) EXPECT_EQ(canonicalize(canonicalize(c, o), o), c);
    EXPECT_EQ(canonicalize(Choice::A, Orientation::OriginalRight), Choice::B);
    EXPECT_EQ(canonicalize(Choice::C, Orientation::OriginalRight), Choice::C);
    EXPECT_EQ(canonicalize(Choice::A, Orientation::OriginalLeft), Choice::A);
}

TEST(Service, NextSubmitAndErrors) {
    test_support::TempDir dir;
    AnnotationService svc(small_plan(), dir.path() / "judgments.jsonl", fixed_clock());
    const auto& plan = svc.plan();
    std::string who = plan.assignments[0].annotator_id;
    std::string other = who == "ann0" ? "ann1" : "ann0";

    auto t1 = svc.next_task(who);
    auto t2 = svc.next_task(who);
    ASSERT_TRUE(t1);
    EXPECT_EQ(t1->task_id, t2->task_id);
    EXPECT_EQ(t1->done, 0u);
    EXPECT_EQ(t1->total, 2u);

    auto it = std::find_if(plan.assignments.begin(), plan.assignments.end(), [&](auto& a) { return a.task_id == t1->task_id; });
    bool left_original = it->orientation == Orientation::OriginalLeft;
    EXPECT_EQ(t1->left, left_original ? plan.pairs[it->pair].original : plan.pairs[it->pair].perturbed);

    auto code_of = [&](auto fn) {
        try {
            fn();
        } catch (const ServiceError& e) {
            return e.code();
        }
        return std::string("none");
    };
    EXPECT_EQ(code_of([&] { svc.submit("nope", who, "A"); }), "unknown_task");
    EXPECT_EQ(code_of([&] { svc.submit(t1->task_id, other, "A"); }), "not_assigned");
    EXPECT_EQ(code_of([&] { svc.submit(t1->task_id, who, "E"); }), "invalid_choice");
    EXPECT_EQ(code_of([&] { svc.next_task("stranger"); }), "unknown_annotator");

    auto r = svc.submit(t1->task_id, who, "A");
    EXPECT_EQ(r.choice, left_original ? Choice::A : Choice::B);
    EXPECT_EQ(code_of([&] { svc.submit(t1->task_id, who, "C"); }), "already_answered");
    EXPECT_NE(svc.next_task(who)->task_id, t1->task_id);

    while (auto t = svc.next_task(who)) svc.submit(t->task_id, who, "C");
    EXPECT_FALSE(svc.next_task(who));
    auto p = svc.progress();
    EXPECT_EQ(p.submitted, 2u);
    EXPECT_EQ(p.remaining, 2u);
    EXPECT_EQ(p.per_annotator[who], (std::pair<std::size_t, std::size_t>{2, 2}));
}

TEST(Service, OrientationFlipStoresCanonical) {
    test_support::TempDir dir;
    // Find a seed whose first task is served original-right.
    for (std::uint64_t seed = 0; seed < 64; ++seed) {
        auto plan = small_plan(seed);
        if (plan.assignments[0].orientation != Orientation::OriginalRight) continue;
        AnnotationService svc(plan, dir.path() / ("j" + std::to_string(seed) + ".jsonl"), fixed_clock());
        auto r = svc.submit(plan.assignments[0].task_id, plan.assignments[0].annotator_id, "A");
        EXPECT_EQ(r.raw_choice, Choice::A);
        EXPECT_EQ(r.choice, Choice::B);
        return;
    }
    FAIL() << "no original-right orientation drawn";
}

TEST(Service, JournalReplayAndByteIdenticalExport) {
    test_support::TempDir dir;
    auto journal = dir.path() / "run" / "judgments.jsonl";
    std::string first_export;
    {
        AnnotationService svc(small_plan(), journal, fixed_clock());
        EXPECT_TRUE(svc.export_judgments().empty());
        for (const auto& a : svc.plan().assignments) svc.submit(a.task_id, a.annotator_id, a.group == 0 ? "B" : "D");
        first_export = annotations_to_jsonl(svc.export_judgments());
        EXPECT_EQ(svc.export_judgments().size(), 4u);
    }
    {
        AnnotationService again(small_plan(), journal, fixed_clock());
        EXPECT_EQ(annotations_to_jsonl(again.export_judgments()), first_export);
        EXPECT_EQ(again.progress().remaining, 0u);
    }
    // Import the export into a fresh journal.
    auto imported = dir.path() / "imported.jsonl";
    std::ofstream(imported, std::ios::binary) << first_export;
    AnnotationService fresh(small_plan(), imported, fixed_clock());
    EXPECT_EQ(annotations_to_jsonl(fresh.export_judgments()), first_export);
}

TEST(Service, TornLineDroppedAndForeignRecordsRejected) {
    test_support::TempDir dir;
    auto journal = dir.path() / "j.jsonl";
    auto plan = small_plan();
    {
        AnnotationService svc(plan, journal, fixed_clock());
        svc.submit(plan.assignments[0].task_id, plan.assignments[0].annotator_id, "A");
    }
    std::ofstream(journal, std::ios::binary | std::ios::app) << "{\"task_id\":\"t0000";
    {
        AnnotationService svc(plan, journal, fixed_clock());
        EXPECT_EQ(svc.export_judgments().size(), 1u);
        svc.submit(plan.assignments[1].task_id, plan.assignments[1].annotator_id, "C");
    }
    AnnotationService svc(plan, journal, fixed_clock());
    EXPECT_EQ(svc.export_judgments().size(), 2u);

    auto bad = dir.path() / "bad.jsonl";
    auto rec = svc.export_judgments()[0];
    std::ofstream(bad, std::ios::binary) << annotation_record_to_json(rec) << "\n" << annotation_record_to_json(rec) << "\n";
    EXPECT_THROW(AnnotationService(plan, bad, fixed_clock()), ValidationError);
}

TEST(Service, ConcurrentDuplicateSubmissionsHaveOneWinner) {
    test_support::TempDir dir;
    auto plan = build_plan(pairs(1), {crit(Aspect::Fluency, DescriptionKind::detailed())}, annotators(1), {1, 0});
    AnnotationService svc(plan, dir.path() / "j.jsonl");
    for (const auto& a : plan.assignments) {
        std::atomic<int> ok{0}, conflict{0};
        std::vector<std::jthread> threads;
        for (int t = 0; t < 8; ++t)
            threads.emplace_back([&] {
                try {
                    svc.submit(a.task_id, a.annotator_id, "A");
                    ++ok;
                } catch (const ServiceError& e) {
                    if (e.code() == "already_answered") ++conflict;
                }
            });
        threads.clear();
        EXPECT_EQ(ok.load(), 1);
        EXPECT_EQ(conflict.load(), 7);
    }
    EXPECT_EQ(svc.export_judgments().size(), plan.size());
}

TEST(Server, EndpointsAndShutdown) {
    test_support::TempDir dir;
    AnnotationService svc(small_plan(), dir.path() / "j.jsonl", fixed_clock());
    std::filesystem::create_directories(dir.path() / "ui");
    std::ofstream(dir.path() / "ui" / "index.html") << "<html>ui</html>";
    ServerOptions opts;
    opts.operator_token = "secret";
    opts.static_dir = dir.path() / "ui";
    AnnotationServer server(svc, opts);
    int port = server.start();
    ASSERT_GT(port, 0);
    httplib::Client cli("127.0.0.1", port);
    std::string who = svc.plan().assignments[0].annotator_id;

    auto next = cli.Get("/api/annotators/" + who + "/next");
    ASSERT_TRUE(next);
    EXPECT_EQ(next->status, 200);
    auto task = nlohmann::json::parse(next->body);
    EXPECT_FALSE(task.contains("orientation"));
    EXPECT_EQ(task["progress"]["total"], 2);
    EXPECT_FALSE(task["criterion"]["definition"].get<std::string>().empty());

    auto post = [&](const std::string& body) { return cli.Post("/api/judgments", body, "application/json"); };
    auto ok = post(nlohmann::json{{"task_id", task["task_id"]}, {"annotator_id", who}, {"choice", "C"}}.dump());
    EXPECT_EQ(ok->status, 200);
    EXPECT_EQ(nlohmann::json::parse(ok->body)["ok"], true);
    auto again = post(nlohmann::json{{"task_id", task["task_id"]}, {"annotator_id", who}, {"choice", "C"}}.dump());
    EXPECT_EQ(again->status, 409);
    EXPECT_EQ(nlohmann::json::parse(again->body)["error"]["code"], "already_answered");
    EXPECT_EQ(post(nlohmann::json{{"task_id", task["task_id"]}, {"annotator_id", who}, {"choice", "E"}}.dump())->status, 400);
    EXPECT_EQ(post(nlohmann::json{{"task_id", "zzz"}, {"annotator_id", who}, {"choice", "A"}}.dump())->status, 404);
    EXPECT_EQ(post("not json")->status, 400);
    EXPECT_EQ(cli.Get("/api/annotators/nobody/next")->status, 404);

    auto stats = nlohmann::json::parse(cli.Get("/api/stats")->body);
    EXPECT_EQ(stats["submitted"], 1);
    EXPECT_EQ(stats["remaining"], 3);

    EXPECT_EQ(cli.Get("/api/export")->status, 401);
    auto exported = cli.Get("/api/export?token=secret");
    EXPECT_EQ(exported->status, 200);
    EXPECT_EQ(exported->body, annotations_to_jsonl(svc.export_judgments()));
    httplib::Headers auth = {{"Authorization", "Bearer secret"}};
    EXPECT_EQ(cli.Get("/api/export", auth)->status, 200);

    auto page = cli.Get("/index.html");
    ASSERT_TRUE(page);
    EXPECT_EQ(page->body, "<html>ui</html>");

    server.stop();
    EXPECT_FALSE(server.running());
    server.stop();  // idempotent
}
