#include "nst/errors.hpp"

namespace nst {

namespace {

template <typename E>
[[noreturn]] void prefixed(const E& e, const std::string& context) {
    throw E(context + ": " + e.what());
}

} // namespace

void rethrow_with_context(const std::string& context) {
    try {
        throw;
    } catch (const DimensionError& e) {
        prefixed(e, context);
    } catch (const NumericalError& e) {
        prefixed(e, context);
    } catch (const DataError& e) {
        prefixed(e, context);
    } catch (const ConfigError& e) {
        prefixed(e, context);
    } catch (const PreconditionError& e) {
        prefixed(e, context);
    } catch (const DegenerateSeriesError& e) {
        prefixed(e, context);
    } catch (const Error& e) {
        prefixed(e, context);
    }
}

} // namespace nst
